"""Exception hierarchy shared across the package."""


class GridfillError(Exception):
    """Base class for all package errors."""


class ConfigError(GridfillError):
    """Invalid user input: bad file, bad parameter, inconsistent dimensions."""


class FeederError(ConfigError):
    """A feeder description violates its structural invariants."""


class PowerFlowError(GridfillError):
    """The nonlinear power flow failed to converge or hit a zero voltage."""


class NumericalError(GridfillError):
    """A numerical routine produced an unusable result (NaN, ill-conditioning,
    loss of monotone descent)."""
