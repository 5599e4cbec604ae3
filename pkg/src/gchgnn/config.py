"""Run configuration: an INI-flavored text format parsed into TrainConfig.

Format: UTF-8 text, `[section]` headers, flat `key = value` lines, `#`
comments. Unknown sections or keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .hetero_graph import MetaPath
from .losses import LossWeights


@dataclass
class TrainConfig:
    # dataset
    data_dir: str | None = None
    target_type: str = "paper"
    metapaths: list[MetaPath] = field(default_factory=list)
    # model
    dim: int = 64
    encoder_layers: int = 1
    decoder_layers: int = 1
    encoder_kind: str = "gcn"
    decoder_kind: str = "gat"
    mask_ratio: float = 0.3
    remask_ratio: float | None = None     # defaults to mask_ratio / 2
    attention_slope: float = 0.2
    gen_target_raw: bool = False
    # losses
    tau: float = 0.5
    eta: float = 2.0
    view_balance: float = 0.5
    lambda_intra: float = 0.3
    lambda_inter: float = 0.6
    lambda_gen: float = 0.1
    lambda_hcl: float = 1.0
    lambda_bpr: float = 1.0
    # sampling
    k_location: int = 8
    k_semantic: int = 8
    intra_fraction: float = 0.5
    walks_per_node: int = 10
    walk_length: int = 20
    window: int = 5
    negatives_per_pair: int = 5
    mp2v_dim: int = 64
    mp2v_epochs: int = 3
    mp2v_lr: float = 0.025
    # train
    epochs: int = 200
    lr: float = 5e-3
    seed: int = 0
    threads: int = 1
    timing: bool = False
    early_stop_patience: int = 0
    # eval
    labels_per_class: int = 20
    repeats: int = 10
    probe_embedding: str = "h2"
    rank_k: int = 20
    user_type: str = ""
    item_type: str = ""
    interaction_relation: str = ""
    link_test_fraction: float = 0.2
    link_layers: int = 2

    def __post_init__(self):
        if self.remask_ratio is None:
            self.remask_ratio = self.mask_ratio / 2.0
        if self.probe_embedding not in ("h1", "h2", "concat"):
            raise ConfigError(f"probe_embedding must be h1|h2|concat, got {self.probe_embedding!r}")
        for kind in (self.encoder_kind, self.decoder_kind):
            if kind not in ("gcn", "gat"):
                raise ConfigError(f"encoder/decoder kind must be gcn|gat, got {kind!r}")

    def loss_weights(self) -> LossWeights:
        return LossWeights(tau=self.tau, eta=self.eta, view_balance=self.view_balance,
                           intra=self.lambda_intra, inter=self.lambda_inter,
                           gen=self.lambda_gen, hcl=self.lambda_hcl, bpr=self.lambda_bpr)


# (section, key) -> (attribute, kind); kind drives parsing and rendering
_SCHEMA: dict[str, list[tuple[str, str, str]]] = {
    "dataset": [
        ("dir", "data_dir", "str"),
        ("target_type", "target_type", "str"),
        ("meta_paths", "metapaths", "metapaths"),
    ],
    "model": [
        ("dim", "dim", "int"),
        ("encoder_layers", "encoder_layers", "int"),
        ("decoder_layers", "decoder_layers", "int"),
        ("encoder_kind", "encoder_kind", "str"),
        ("decoder_kind", "decoder_kind", "str"),
        ("mask_ratio", "mask_ratio", "float"),
        ("remask_ratio", "remask_ratio", "float"),
        ("attention_slope", "attention_slope", "float"),
        ("gen_target_raw", "gen_target_raw", "bool"),
    ],
    "losses": [
        ("tau", "tau", "float"),
        ("eta", "eta", "float"),
        ("view_balance", "view_balance", "weight"),
        ("lambda_intra", "lambda_intra", "weight"),
        ("lambda_inter", "lambda_inter", "weight"),
        ("lambda_gen", "lambda_gen", "weight"),
        ("lambda_hcl", "lambda_hcl", "weight"),
        ("lambda_bpr", "lambda_bpr", "weight"),
    ],
    "sampling": [
        ("k_location", "k_location", "int"),
        ("k_semantic", "k_semantic", "int"),
        ("intra_fraction", "intra_fraction", "float"),
        ("walks_per_node", "walks_per_node", "int"),
        ("walk_length", "walk_length", "int"),
        ("window", "window", "int"),
        ("negatives_per_pair", "negatives_per_pair", "int"),
        ("mp2v_dim", "mp2v_dim", "int"),
        ("mp2v_epochs", "mp2v_epochs", "int"),
        ("mp2v_lr", "mp2v_lr", "float"),
    ],
    "train": [
        ("epochs", "epochs", "int"),
        ("lr", "lr", "float"),
        ("seed", "seed", "int"),
        ("threads", "threads", "int"),
        ("timing", "timing", "bool"),
        ("early_stop_patience", "early_stop_patience", "int"),
    ],
    "eval": [
        ("labels_per_class", "labels_per_class", "int"),
        ("repeats", "repeats", "int"),
        ("probe_embedding", "probe_embedding", "str"),
        ("rank_k", "rank_k", "int"),
        ("user_type", "user_type", "str"),
        ("item_type", "item_type", "str"),
        ("interaction_relation", "interaction_relation", "str"),
        ("link_test_fraction", "link_test_fraction", "float"),
        ("link_layers", "link_layers", "int"),
    ],
}


def _parse_value(kind: str, raw: str, where: str):
    if kind == "str":
        return raw
    if kind == "int":
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{where}: expected integer, got {raw!r}") from None
    if kind in ("float", "weight"):
        try:
            v = float(raw)
        except ValueError:
            raise ConfigError(f"{where}: expected number, got {raw!r}") from None
        if not math.isfinite(v):
            raise ConfigError(f"{where}: value must be finite")
        if kind == "weight" and v < 0:
            raise ConfigError(f"{where}: weight must be nonnegative")
        return v
    if kind == "bool":
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{where}: expected true/false, got {raw!r}")
    if kind == "metapaths":
        out = []
        for item in raw.split():
            if ":" not in item:
                raise ConfigError(f"{where}: meta-path entry {item!r} needs NAME:steps")
            name, steps = item.split(":", 1)
            out.append(MetaPath.parse(name, steps))
        return out
    raise ConfigError(f"internal: unknown kind {kind}")


def _render_value(kind: str, value) -> str:
    if kind == "metapaths":
        return " ".join(f"{mp.name}:{mp.spec_string()}" for mp in value)
    if kind == "bool":
        return "true" if value else "false"
    if kind in ("float", "weight"):
        return repr(float(value))
    return str(value)


def parse_config_text(text: str) -> TrainConfig:
    values: dict[str, object] = {}
    section = None
    keymaps = {sec: {k: (attr, kind) for k, attr, kind in entries}
               for sec, entries in _SCHEMA.items()}
    for ln, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
            if section not in _SCHEMA:
                raise ConfigError(f"line {ln}: unknown section [{section}]")
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {ln}: expected key = value")
        if section is None:
            raise ConfigError(f"line {ln}: key outside any [section]")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in keymaps[section]:
            raise ConfigError(f"line {ln}: unknown key {key!r} in [{section}]")
        attr, kind = keymaps[section][key]
        if attr in values:
            raise ConfigError(f"line {ln}: duplicate key {key!r}")
        values[attr] = _parse_value(kind, raw, f"line {ln} [{section}] {key}")
    return TrainConfig(**values)


def load_config(path) -> TrainConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"))


def serialize_config(cfg: TrainConfig) -> str:
    lines = []
    for sec, entries in _SCHEMA.items():
        lines.append(f"[{sec}]")
        for key, attr, kind in entries:
            value = getattr(cfg, attr)
            if value is None:
                continue
            lines.append(f"{key} = {_render_value(kind, value)}")
        lines.append("")
    return "\n".join(lines)


def config_equal(a: TrainConfig, b: TrainConfig) -> bool:
    for f in fields(TrainConfig):
        if getattr(a, f.name) != getattr(b, f.name):
            return False
    return True
