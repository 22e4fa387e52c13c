"""Exception hierarchy.

Each error carries an ``exit_code`` so the command line can map failures to
process status without a lookup table: 1 usage/config, 2 data, 3 numeric.
"""


class SoundsieveError(Exception):
    exit_code = 2


# audio ingestion
class MalformedRiff(SoundsieveError):
    pass


class UnsupportedEncoding(SoundsieveError):
    pass


class EmptyData(SoundsieveError):
    pass


# features
class ClipTooShort(SoundsieveError):
    pass


class InsufficientData(SoundsieveError):
    pass


# numerics
class ShapeMismatch(SoundsieveError, ValueError):
    exit_code = 3


class UnreachableTargetShape(ShapeMismatch):
    pass


class BatchTooSmall(SoundsieveError, ValueError):
    exit_code = 3


class NonFiniteLoss(SoundsieveError, FloatingPointError):
    exit_code = 3


# models / training
class KindMismatch(SoundsieveError, TypeError):
    pass


class TooFewFiles(SoundsieveError):
    pass


# evaluation
class DegenerateLabels(SoundsieveError, ValueError):
    pass


class EmptyType(SoundsieveError, ValueError):
    pass


class MissingFamily(SoundsieveError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


# dataset / pipeline
class MissingDirectory(SoundsieveError, FileNotFoundError):
    pass


class UnparsableFilename(SoundsieveError, ValueError):
    pass


class MissingArtifact(SoundsieveError):
    def __init__(self, stage, detail=""):
        self.stage = stage
        msg = f"missing artifact from stage {stage!r}"
        super().__init__(f"{msg}: {detail}" if detail else msg)


class ConfigError(SoundsieveError):
    exit_code = 1
