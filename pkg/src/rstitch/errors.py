"""Exception types raised across the package."""


class StitchError(Exception):
    pass


class InvalidDistribution(StitchError, ValueError):
    pass


class NegativeProbability(InvalidDistribution):
    pass


class NotNormalized(InvalidDistribution):
    pass


class WrongLength(InvalidDistribution):
    pass


class CacheError(StitchError):
    pass


class CacheAhead(CacheError):
    pass


class CacheGap(CacheError):
    pass


class StaleCache(CacheError):
    pass


class EmptyCache(CacheError):
    pass


class VocabularyMismatch(StitchError):
    pass


class BackendFailure(StitchError):
    def __init__(self, step: int, cause: Exception):
        super().__init__(f"backend failed at step {step}: {cause!r}")
        self.step = step
        self.cause = cause


class RankDeficient(StitchError):
    pass


class MissingCoefficients(StitchError, KeyError):
    pass


class DegenerateGroup(StitchError):
    pass


class NoDecisionPoints(StitchError):
    pass
