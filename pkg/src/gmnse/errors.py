"""Exception types raised across the package."""


class InvalidGridError(ValueError):
    pass


class GridMismatchError(ValueError):
    pass


class ContractViolation(ValueError):
    """An operation was handed input outside its precondition."""


class StepSizeError(RuntimeError):
    """Advective stability bound violated; carries the offending ``max|u|``."""

    def __init__(self, umax, dt, limit):
        self.umax = umax
        self.dt = dt
        self.limit = limit
        super().__init__(f"dt={dt:g} exceeds CFL limit {limit:g} (max|u|={umax:g})")


class ProtocolError(RuntimeError):
    """An experiment protocol produced data outside its guaranteed envelope."""


class DivergenceError(RuntimeError):
    """Fixed-point iteration failed to converge."""


class ConfigError(ValueError):
    """Bad experiment configuration; ``key`` names the offending entry."""

    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")
