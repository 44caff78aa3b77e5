"""Exception types raised across the library.

Every error carries a short machine-readable ``code`` so the CLI can map it to
an exit status without string matching.
"""


class MeandimError(Exception):
    code = "error"


class SchemaError(MeandimError, ValueError):
    code = "schema"


class HorizonExceeded(MeandimError, ValueError):
    code = "horizon-exceeded"


class NonCommuting(MeandimError, ValueError):
    code = "non-commuting"


class NotACover(MeandimError, ValueError):
    code = "not-a-cover"


class Infeasible(MeandimError):
    code = "infeasible"


class SearchCapExceeded(MeandimError):
    code = "search-cap-exceeded"


class AnchorConflict(MeandimError):
    code = "anchor-conflict"


class InsufficientRows(MeandimError, ValueError):
    code = "insufficient-rows"


class CaseBoundViolated(MeandimError, ValueError):
    code = "case-bound-violated"


class InvalidPattern(MeandimError, ValueError):
    code = "invalid-pattern"


class PreconditionFailed(MeandimError):
    code = "precondition-failed"


class GeneralPositionExhausted(MeandimError):
    code = "general-position-exhausted"


class RegionOverlap(MeandimError):
    code = "region-overlap"


class OrderBoundViolated(MeandimError):
    code = "order-bound-violated"


class SeparationFailed(MeandimError):
    code = "separation-failed"


class RationalAlpha(MeandimError, ValueError):
    code = "rational-alpha"


class ResolutionTooCoarse(MeandimError):
    code = "resolution-too-coarse"


class HeightMismatch(MeandimError, ValueError):
    code = "height-mismatch"


class NotEquivariant(MeandimError):
    code = "not-equivariant"


class GateFailed(MeandimError):
    """A hypothesis gate of the embedding pipeline did not hold.

    ``gate`` names the failed check and ``certificate`` carries the numbers
    that show it.
    """

    code = "gate-failed"

    def __init__(self, gate, message, certificate=None):
        super().__init__(f"{gate}: {message}")
        self.gate = gate
        self.certificate = dict(certificate or {})
