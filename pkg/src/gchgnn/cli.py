"""Command-line surface.

Subcommands: generate, pretrain, embed, probe, link-train, link-eval,
gradcheck, selftest. Every command honors --seed, exits 0 on success,
2 on usage errors, and 1 with a machine-parsable `error: <Type>: <msg>`
line on runtime failures.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import selfcheck
from .config import TrainConfig, load_config
from .errors import BadCheckpoint, GCHGNNError, MissingFile
from .evaluate import MetricsReport, linear_probe, rank_eval
from .gradcheck import DEFAULT_TOLERANCE, run_full_suite
from .hetero_graph import load_hin
from .storage import load_checkpoint, save_checkpoint, write_fmat
from .synthetic import SyntheticSpec, generate_synthetic
from .training import pretrain_node, split_interactions, train_link

H1_KEY = "output.h1"
H2_KEY = "output.h2"
USER_KEY = "output.user"
ITEM_KEY = "output.item"


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gchgnn",
        description="Generative-contrastive representation learning on "
                    "heterogeneous graphs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic planted-community dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-target", type=int, default=900)
    p.add_argument("--n-aux", type=int, default=300)
    p.add_argument("--communities", type=int, default=3)
    p.add_argument("--intra", type=float, default=0.04)
    p.add_argument("--inter", type=float, default=0.001)
    p.add_argument("--feature-dim", type=int, default=32)
    p.add_argument("--noise", type=float, default=4.0)
    p.add_argument("--seed", type=int, default=7)

    for name, help_text in (("pretrain", "self-supervised node pretraining"),
                            ("link-train", "link-prediction training")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True)
        p.add_argument("--data", default=None, help="dataset dir (overrides config)")
        p.add_argument("--out", required=True, help="checkpoint path")
        p.add_argument("--seed", type=int, default=None, help="overrides config seed")
        p.add_argument("--timing", action="store_true",
                       help="measure wall-clock per epoch (report not byte-stable)")

    p = sub.add_parser("embed", help="export embeddings from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--which", choices=["h1", "h2", "both"], default="h2")
    p.add_argument("--out", required=True, help="output path (FMAT1)")
    p.add_argument("--tsv", default=None, help="also write a TSV copy here")
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("probe", help="linear-probe node classification")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("link-eval", help="ranking metrics on held-out interactions")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shapes", type=int, default=20)

    p = sub.add_parser("selftest", help="oracle-equivalence checks")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _load(args) -> tuple[TrainConfig, "object"]:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "timing", False):
        cfg.timing = True
    data_dir = args.data or cfg.data_dir
    if not data_dir:
        raise GCHGNNError("no dataset directory (use --data or [dataset] dir)")
    g = load_hin(data_dir)
    return cfg, g


def export_embeddings(checkpoint_path, which: str, out, tsv=None) -> list[Path]:
    """Write h1/h2 from a checkpoint as FMAT1, optionally with a TSV copy
    (node_id, then the embedding at 6 significant digits)."""
    arrays = load_checkpoint(checkpoint_path)
    wanted = {"h1": [H1_KEY], "h2": [H2_KEY], "both": [H1_KEY, H2_KEY]}[which]
    written = []
    for key in wanted:
        if key not in arrays:
            raise BadCheckpoint(f"checkpoint has no {key!r} entry")
    for key in wanted:
        suffix = key.split(".")[-1]
        path = Path(out)
        if which == "both":
            path = path.with_name(f"{path.stem}.{suffix}{path.suffix or '.fmat'}")
        write_fmat(path, arrays[key])
        written.append(path)
        if tsv is not None:
            tsv_path = Path(tsv)
            if which == "both":
                tsv_path = tsv_path.with_name(
                    f"{tsv_path.stem}.{suffix}{tsv_path.suffix or '.tsv'}")
            mat = arrays[key]
            with open(tsv_path, "w", encoding="utf-8") as fh:
                for i, row in enumerate(mat):
                    cells = "\t".join(f"{v:.6g}" for v in row)
                    fh.write(f"{i}\t{cells}\n")
            written.append(tsv_path)
    return written


def _cmd_generate(args) -> int:
    spec = SyntheticSpec(
        n_target=args.n_target, n_aux_per_type=args.n_aux,
        n_communities=args.communities, intra_edge_prob=args.intra,
        inter_edge_prob=args.inter, feature_dim=args.feature_dim,
        feature_noise_sigma=args.noise, seed=args.seed)
    g = generate_synthetic(spec, args.out)
    edges = sum(int(g.adjacency[r.name].nnz) for r in g.relations)
    print(f"wrote {args.out}: {g.num_nodes} nodes, {edges} edges, "
          f"{len(g.relations)} relations")
    return 0


def _cmd_pretrain(args) -> int:
    cfg, g = _load(args)
    cache = Path(args.data or cfg.data_dir) / "cache"
    result = pretrain_node(g, cfg, cache_dir=cache)
    arrays = dict(result.params.state_arrays())
    arrays[H1_KEY] = result.h1
    arrays[H2_KEY] = result.h2
    save_checkpoint(args.out, arrays)
    report = MetricsReport(losses=result.losses, epoch_seconds=result.epoch_seconds)
    print(report.to_json())
    return 0


def _cmd_embed(args) -> int:
    written = export_embeddings(args.checkpoint, args.which, args.out, args.tsv)
    for path in written:
        print(path)
    return 0


def _cmd_probe(args) -> int:
    cfg, g = _load(args)
    arrays = load_checkpoint(args.checkpoint)
    for key in (H1_KEY, H2_KEY):
        if key not in arrays:
            raise BadCheckpoint(f"checkpoint has no {key!r} entry")
    if cfg.probe_embedding == "h1":
        emb = arrays[H1_KEY]
    elif cfg.probe_embedding == "h2":
        emb = arrays[H2_KEY]
    else:
        emb = np.concatenate([arrays[H1_KEY], arrays[H2_KEY]], axis=1)
    labels = g.label_array(cfg.target_type)
    report = linear_probe(emb, labels, cfg.labels_per_class,
                          repeats=cfg.repeats, seed=cfg.seed)
    print(report.to_json())
    return 0


def _cmd_link_train(args) -> int:
    cfg, g = _load(args)
    cache = Path(args.data or cfg.data_dir) / "cache"
    model = train_link(g, cfg, cache_dir=cache)
    arrays = dict(model.params.state_arrays())
    arrays[USER_KEY] = model.user_final
    arrays[ITEM_KEY] = model.item_final
    save_checkpoint(args.out, arrays)
    report = MetricsReport(losses=model.losses, epoch_seconds=model.epoch_seconds)
    print(report.to_json())
    return 0


def _cmd_link_eval(args) -> int:
    cfg, g = _load(args)
    arrays = load_checkpoint(args.checkpoint)
    for key in (USER_KEY, ITEM_KEY):
        if key not in arrays:
            raise BadCheckpoint(f"checkpoint has no {key!r} entry")
    rel = g.relation(cfg.interaction_relation)
    if rel is None:
        raise GCHGNNError(f"unknown relation {cfg.interaction_relation!r}")
    inter = g.adjacency[rel.name].tocsr()
    if (rel.src_type, rel.dst_type) == (cfg.item_type, cfg.user_type):
        inter = inter.T.tocsr()
    split = split_interactions(inter, cfg.link_test_fraction, cfg.seed)
    report = rank_eval(arrays[USER_KEY], arrays[ITEM_KEY],
                       split.train, split.test, k=cfg.rank_k)
    print(report.to_json())
    return 0


def _cmd_gradcheck(args) -> int:
    results = run_full_suite(seed=args.seed, shapes_per_op=args.shapes)
    worst = 0.0
    for name in sorted(results):
        err = results[name]
        worst = max(worst, err)
        status = "ok" if err < DEFAULT_TOLERANCE else "FAIL"
        print(f"{status} {name} {err:.3e}")
    print(f"max relative error {worst:.3e} (tolerance {DEFAULT_TOLERANCE:g})")
    return 0 if worst < DEFAULT_TOLERANCE else 1


def _cmd_selftest(args) -> int:
    failures = 0
    for name, fn in selfcheck.all_checks():
        try:
            detail = fn(args.seed)
            print(f"ok {name} ({detail})")
        except AssertionError as exc:
            failures += 1
            print(f"FAIL {name}: {exc}")
    return 0 if failures == 0 else 1


_COMMANDS = {
    "generate": _cmd_generate,
    "pretrain": _cmd_pretrain,
    "embed": _cmd_embed,
    "probe": _cmd_probe,
    "link-train": _cmd_link_train,
    "link-eval": _cmd_link_eval,
    "gradcheck": _cmd_gradcheck,
    "selftest": _cmd_selftest,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (GCHGNNError, MissingFile, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
