class DimensionError(ValueError):
    pass


class ParameterError(ValueError):
    pass


class NumericError(RuntimeError):
    pass


class SPDViolationError(NumericError):
    pass


class TrainingError(NumericError):
    pass


class OptimizationError(NumericError):
    pass


class SolverError(NumericError):
    pass


class CoverageError(ValueError):
    pass
