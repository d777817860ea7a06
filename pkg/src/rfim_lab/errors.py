"""Exception types shared across the package."""


class RfimLabError(Exception):
    """Base class for all package-specific errors."""


class DomainError(RfimLabError):
    """An argument lies outside the mathematical domain of an operation."""


class ConvergenceError(RfimLabError):
    """An iterative routine failed to reach its tolerance.

    Carries the best estimate found so far and the iteration count, so
    callers can decide whether a degraded answer is still usable.
    """

    def __init__(self, message, best=None, iterations=None):
        super().__init__(message)
        self.best = best
        self.iterations = iterations


class CertificateError(RfimLabError):
    """A regime certificate required by an operation is missing or failed."""


class ConfigError(RfimLabError):
    """Experiment configuration failed validation.

    ``errors`` lists every offending key, not just the first one found.
    """

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration: " + "; ".join(self.errors))
