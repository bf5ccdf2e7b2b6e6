"""Exception hierarchy shared by the library and the CLI."""


class LatentPnPError(Exception):
    """Base class for all errors raised by latentpnp."""

    exit_code = 1


class ConfigError(LatentPnPError, ValueError):
    exit_code = 2


class ShapeError(LatentPnPError, ValueError):
    exit_code = 2


class RangeError(LatentPnPError, ValueError):
    exit_code = 2


class CapabilityError(LatentPnPError, ValueError):
    exit_code = 2


class MissingFileError(ConfigError, FileNotFoundError):
    exit_code = 4

    def __init__(self, path, what="file"):
        self.path = str(path)
        super().__init__(f"{what} not found: {self.path}")


class SolverError(LatentPnPError, RuntimeError):
    """Iterative solve did not reach its tolerance."""

    exit_code = 3

    def __init__(self, message, residual):
        self.residual = float(residual)
        super().__init__(f"{message} (final relative residual {self.residual:.3e})")


class DivergenceError(LatentPnPError, RuntimeError):
    """A Langevin iterate became non-finite or left the safety box."""

    exit_code = 3

    def __init__(self, iteration, norm, trace=None):
        self.iteration = int(iteration)
        self.norm = float(norm)
        self.trace = list(trace) if trace is not None else []
        super().__init__(f"sampler diverged at iteration {self.iteration}: |Z|_inf = {self.norm:.3e}")
