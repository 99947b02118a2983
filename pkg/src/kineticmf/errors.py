"""Exception types shared across the package, mapped to CLI exit codes."""


class ConfigError(Exception):
    """Invalid configuration: unknown key, bad value, or inconsistent sections."""

    exit_code = 2


class NumericalError(Exception):
    """A solver failed for numerical reasons (blow-up, non-convergence)."""

    exit_code = 3


class SimulationBlowup(NumericalError):
    """Non-finite particle state encountered while stepping."""

    def __init__(self, step_index: int, particle_id: int, detail: str = ""):
        self.step_index = step_index
        self.particle_id = particle_id
        msg = f"non-finite state at step {step_index}, particle {particle_id}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class PicardConvergenceError(NumericalError):
    """The per-step fixed-point iteration of the grid solver did not converge."""

    def __init__(self, step_index: int, iterations: int, residual: float):
        self.step_index = step_index
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"Picard iteration failed at step {step_index}: "
            f"residual {residual:.3e} after {iterations} iterations"
        )


class ModelEvaluationError(NumericalError):
    """A model map produced a non-finite value; names the offending term."""

    def __init__(self, term: str, detail: str = ""):
        self.term = term
        msg = f"non-finite value from model term '{term}'"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class AssumptionViolation(Exception):
    """A declared hypothesis bound (H1/H2/H3) failed empirical probing."""

    exit_code = 4

    def __init__(self, hypothesis: str, detail: str):
        self.hypothesis = hypothesis
        super().__init__(f"{hypothesis} violated: {detail}")


class CheckFailure(Exception):
    """An acceptance-style check failed in --check mode."""

    exit_code = 4
