"""Exception hierarchy shared by the estimation and testing modules."""


class HmmFdrError(Exception):
    """Base class for all library errors."""


class NonIrreducible(HmmFdrError):
    pass


class QuadratureFailure(HmmFdrError):
    pass


class TooFewObservations(HmmFdrError):
    pass


class RankDeficient(HmmFdrError):
    pass


class NearSingularProjection(HmmFdrError):
    pass


class NotDiagonalisable(HmmFdrError):
    pass


class FlatLikelihood(HmmFdrError):
    pass


class AmbiguousAlignment(HmmFdrError):
    pass


class DegenerateLikelihood(HmmFdrError):
    pass


class IndexOutOfWindow(HmmFdrError, IndexError):
    pass


class NotADensity(HmmFdrError):
    pass


class SingularQ(HmmFdrError):
    pass


# Estimator failures that the Monte Carlo harness records as flagged rows.
ESTIMATOR_FAILURES = (RankDeficient, NearSingularProjection, NotDiagonalisable,
                      AmbiguousAlignment, FlatLikelihood, DegenerateLikelihood)
