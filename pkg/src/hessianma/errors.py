"""Exception types shared across the package."""


class HessianMAError(Exception):
    """Base class for all package errors."""


class TruncationSaturated(HessianMAError):
    """The sup/inf over the deck group was attained on the truncation shell.

    The truncated value is unreliable; the caller must enlarge the radius.
    """

    def __init__(self, message, word=None, radius=None):
        super().__init__(message)
        self.word = word
        self.radius = radius


class NotConverged(HessianMAError):
    """Iteration budget exhausted before reaching tolerance."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class NuDegenerate(HessianMAError):
    """The target density on the dual manifold lacks full support."""


class EmptyCell(HessianMAError):
    """An atom's power cell vanished under the current potentials."""

    def __init__(self, message, atom=None):
        super().__init__(message)
        self.atom = atom


class OverflowGuard(HessianMAError):
    """An exponential term would overflow double precision."""


class EntropyInfinite(HessianMAError):
    """Relative entropy is +inf: mass sits where the reference vanishes."""


class UnsupportedDimension(HessianMAError):
    """Operation not available in this dimension."""


class ConfigError(HessianMAError):
    """Invalid run configuration; ``field`` names the offending entry."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field
