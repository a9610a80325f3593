"""Exception types shared across the package."""


class BinauralError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(BinauralError, ValueError):
    pass


class DimensionError(BinauralError, ValueError):
    pass


class DegenerateMeasureError(BinauralError, ArithmeticError):
    """A binaural measure has a vanishing denominator."""


class SolverError(BinauralError, RuntimeError):
    """Per-bin optimisation failed.

    ``bin_index`` is set by :func:`binaural_mwf.solver.solve_scene` when the
    failure can be pinned to a frequency bin; ``iterate`` carries the offending
    point when the failure happened inside a line search.
    """

    def __init__(self, message, bin_index=None, iterate=None):
        super().__init__(message)
        self.bin_index = bin_index
        self.iterate = iterate


class DesignFailure(BinauralError, RuntimeError):
    """The cue thresholds could not be met anywhere on the beta grid."""

    def __init__(self, message, best_beta=None, best_ild=None, best_itd=None):
        super().__init__(message)
        self.best_beta = best_beta
        self.best_ild = best_ild
        self.best_itd = best_itd


class MetricUndefined(BinauralError, ArithmeticError):
    pass
