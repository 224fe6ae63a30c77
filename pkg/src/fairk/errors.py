"""Exception hierarchy shared by all fairk modules."""


class FairKError(Exception):
    """Base class for every error raised by this package."""


class InvalidBudgetError(FairKError, ValueError):
    pass


class ModelConstructionError(FairKError, ValueError):
    """An exchange model violates the analytic-model invariants."""


class UnboundedStalenessError(FairKError, ValueError):
    pass


class SolverError(FairKError, RuntimeError):
    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class AggregationError(FairKError, ValueError):
    pass


class PartitionError(FairKError, RuntimeError):
    pass


class DivergenceError(FairKError, FloatingPointError):
    def __init__(self, message, round_index=None, client=None):
        super().__init__(message)
        self.round_index = round_index
        self.client = client


class AdmissibilityError(FairKError, ValueError):
    """Learning rates violate the step-size conditions of the convergence bound."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class ConfigError(FairKError, ValueError):
    """Configuration failed validation. ``problems`` lists every violated key."""

    def __init__(self, problems):
        self.problems = list(problems)
        lines = "\n".join(f"  - {p}" for p in self.problems)
        super().__init__(f"invalid configuration ({len(self.problems)} problem(s)):\n{lines}")
