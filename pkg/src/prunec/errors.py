"""Exception hierarchy shared by every stage of the pruning pipeline.

Each error carries a machine-readable ``code`` and the process exit status the
command line maps it to (2 for bad user arguments, 3 for bad data or models).
"""


class PruneError(Exception):
    code = "prune_error"
    exit_code = 3

    def __init__(self, message=""):
        super().__init__(message)
        self.message = message

    def __str__(self):
        return self.message


class UsageError(PruneError):
    code = "usage_error"
    exit_code = 2


# graph-ir
class MalformedManifest(PruneError):
    code = "MalformedManifest"


class BadMagic(PruneError):
    code = "BadMagic"


class VersionUnsupported(PruneError):
    code = "VersionUnsupported"


class DanglingTensorRef(PruneError):
    code = "DanglingTensorRef"


class CyclicGraph(PruneError):
    code = "CyclicGraph"


class ShapeMismatch(PruneError):
    code = "ShapeMismatch"


class UnsupportedFlatten(PruneError):
    code = "UnsupportedFlatten"


class Unsupported(PruneError):
    code = "Unsupported"


# importance / planner / rewriter
class FrozenGroup(PruneError):
    code = "FrozenGroup"


class NoBatchNorm(PruneError):
    code = "NoBatchNorm"


class BadK(UsageError):
    code = "BadK"


class BadSparsity(UsageError):
    code = "BadSparsity"


class BadSchedule(UsageError):
    code = "BadSchedule"


class PlanGraphMismatch(PruneError):
    code = "PlanGraphMismatch"


class WouldEmptyGroup(PruneError):
    code = "WouldEmptyGroup"


# executor
class NonFiniteValue(PruneError):
    code = "NonFiniteValue"


# seg-metrics
class DimensionMismatch(PruneError):
    code = "DimensionMismatch"


class MissingClassLabels(PruneError):
    code = "MissingClassLabels"
