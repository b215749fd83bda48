"""Error types shared across the package.

Every error carries a short machine-readable ``code`` and a distinct process
exit status, so the CLI can report failures as one parseable line.
"""


class UaclipError(Exception):
    code = "error"
    exit_status = 1

    def __init__(self, message=""):
        super().__init__(message)
        self.message = message

    def line(self):
        return f"error:{self.code}: {self.message}"


class IOFailure(UaclipError):
    code = "io-failure"
    exit_status = 10


class MalformedImage(UaclipError):
    code = "malformed-image"
    exit_status = 11


class EmptyCorpus(UaclipError):
    code = "empty-corpus"
    exit_status = 12


class DegenerateEmbedding(UaclipError):
    code = "degenerate-embedding"
    exit_status = 13


class NonFiniteScore(UaclipError):
    code = "non-finite-score"
    exit_status = 14


class NonFiniteLoss(UaclipError):
    code = "non-finite-loss"
    exit_status = 15

    def __init__(self, message="", batch_index=None):
        super().__init__(message)
        self.batch_index = batch_index


class MissingField(UaclipError):
    code = "missing-field"
    exit_status = 16


class RankDeficientDesign(UaclipError):
    code = "rank-deficient-design"
    exit_status = 17


class InsufficientObservations(UaclipError):
    code = "insufficient-observations"
    exit_status = 18


class NoCurvature(UaclipError):
    code = "no-curvature"
    exit_status = 19


class CorpusTooSmall(UaclipError):
    code = "corpus-too-small"
    exit_status = 20


class InvalidDistribution(UaclipError):
    code = "invalid-distribution"
    exit_status = 21


class ZeroMarginal(UaclipError):
    code = "zero-marginal"
    exit_status = 22


class IndexOutOfRange(UaclipError):
    code = "index-out-of-range"
    exit_status = 23


class InfeasibleTarget(UaclipError):
    code = "infeasible-target"
    exit_status = 24


class ArityMismatch(UaclipError):
    code = "arity-mismatch"
    exit_status = 25


class InvalidConfig(UaclipError):
    code = "invalid-config"
    exit_status = 26
