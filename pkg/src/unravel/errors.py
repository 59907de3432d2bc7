"""Exception types shared across the package."""


class ModelValidationError(ValueError):
    """A model document or constructed object violates a structural invariant.

    Carries the offending field path (``hamiltonian[0][1]``, ``ensemble.n_traj``, ...)
    in the message so CLI users can locate the problem.
    """


class StepTooLarge(RuntimeError):
    """The step size is too large for the model's rates.

    Raised when a stochastic step drifts the state norm outside [0.5, 1.5]
    before renormalization, when the deterministic integrator breaks a
    conservation law beyond tolerance, or when the dt policy ceiling
    (fastest channel rate times dt above 0.1) is exceeded.
    """


class DarkChannelJump(RuntimeError):
    """A jump was requested on a channel whose rate is numerically zero.

    The thinning scheme can never select such a channel, so this always
    signals a bug in the caller rather than a physical event.
    """


class BoundaryDivergence(ArithmeticError):
    """An entropy correction diverges because some outcome probability is 0.

    Happens when p_i <= 1e-12 while the corresponding coupling coefficient
    is nonzero; the correction is genuinely infinite there and is surfaced
    instead of being clamped. Ensemble reports exclude and count such points.
    """


class TrajectoryError(RuntimeError):
    """Wraps an error raised while simulating one trajectory of an ensemble."""

    def __init__(self, trajectory_index: int, cause: BaseException):
        super().__init__(f"trajectory {trajectory_index}: {cause}")
        self.trajectory_index = trajectory_index
        self.cause = cause

    def __reduce__(self):
        # custom __init__ signature; needed to cross process boundaries
        return (TrajectoryError, (self.trajectory_index, self.cause))


class GridMismatch(ValueError):
    """Two time-gridded objects were combined but their grids differ."""
