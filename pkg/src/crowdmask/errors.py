"""Exception hierarchy.

Everything raised on bad input derives from :class:`CrowdMaskError`, which the
CLI maps to exit code 2.
"""


class CrowdMaskError(Exception):
    pass


class SizeMismatch(CrowdMaskError, ValueError):
    pass


class LengthMismatch(CrowdMaskError, ValueError):
    pass


class EmptyPointSet(CrowdMaskError, ValueError):
    pass


class OutOfBounds(CrowdMaskError, ValueError):
    pass


class MissingGroundTruth(CrowdMaskError, ValueError):
    pass


class NoPredictions(CrowdMaskError, ValueError):
    pass


class EmptyGroundTruth(CrowdMaskError, ValueError):
    pass


class EmptyTrainingSet(CrowdMaskError, ValueError):
    pass


class PlacementFailure(CrowdMaskError, RuntimeError):
    pass
