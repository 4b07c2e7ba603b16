"""Exception types raised by sgwarp."""


class SgwarpError(ValueError):
    """Base class for every error raised on invalid input."""


class ShapeMismatchError(SgwarpError):
    pass


class RankDeficiencyError(SgwarpError):
    """Point configuration is collinear or has duplicates."""


class SingularSystemError(SgwarpError):
    """Linear system for a spline fit cannot be solved."""


class ImageTooSmallError(SgwarpError):
    pass
