"""Exception and warning types shared across the package."""


class GCHGNNError(Exception):
    """Base class for all package errors."""


# dataset loading / graph construction

class MissingFile(GCHGNNError):
    pass


class TypeMismatch(GCHGNNError):
    """Edge endpoint type violates the relation's declared schema."""


class RaggedFeatures(GCHGNNError):
    """Feature matrix row count does not match the node count of its type."""


class IncompatibleMetaPath(GCHGNNError):
    """Meta-path steps do not chain type-compatibly, or do not return to the start type."""


class UnknownNode(GCHGNNError):
    pass


# differentiation engine

class ShapeMismatch(GCHGNNError):
    pass


class NonFiniteValue(GCHGNNError):
    """A forward value contains NaN or Inf."""


class EmptySoftmaxRow(GCHGNNError):
    """A softmax row has no unmasked entry."""


class NonScalarLoss(GCHGNNError):
    pass


# encoders / sampling / losses

class EmptyNeighborhood(GCHGNNError):
    pass


class EmptyCorpus(GCHGNNError):
    pass


class EmptyPositives(GCHGNNError):
    pass


class EmptyTriples(GCHGNNError):
    pass


# training / evaluation

class InsufficientLabels(GCHGNNError):
    pass


class Divergence(GCHGNNError):
    """Training loss became non-finite."""


class NoTestInteractions(GCHGNNError):
    pass


# configuration / io

class InvalidSpec(GCHGNNError):
    pass


class BadCheckpoint(GCHGNNError):
    pass


class ConfigError(GCHGNNError):
    pass


class DuplicateEdgeWarning(UserWarning):
    """Raised (as a warning) when parallel edges are deduplicated at load."""


class ZeroVectorRowWarning(UserWarning):
    """A cosine against an all-zero row was treated as zero."""
