"""Step control and the three-stage strong-stability-preserving Runge-Kutta scheme."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

from .errors import InvalidParameters

# Shu-Osher form of SSP-RK3: stage k is a_k * y0 + b_k * (y_prev + dt * L(y_prev)).
SSPRK3_STAGES = ((0.0, 1.0), (0.75, 0.25), (1.0 / 3.0, 2.0 / 3.0))
# Equivalent quadrature weights of the three stage derivatives.
SSPRK3_WEIGHTS = (1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0)


@dataclass(frozen=True)
class StepControl:
    """Time-stepping controls shared by both solvers.

    ``record_every_step`` stores budgets and fields after every accepted step
    in addition to the checkpoints; space-time residual checks need it.
    """

    cfl: float = 0.4
    dt_max: float = 1.0
    t_end: float = 1.0
    checkpoint_times: tuple[float, ...] = field(default_factory=tuple)
    record_every_step: bool = False

    def __post_init__(self):
        object.__setattr__(self, "checkpoint_times", tuple(float(t) for t in self.checkpoint_times))
        if not 0 < self.cfl <= 1:
            raise InvalidParameters(f"cfl must lie in (0, 1], got {self.cfl}")
        if not self.dt_max > 0:
            raise InvalidParameters(f"dt_max must be > 0, got {self.dt_max}")
        if not self.t_end > 0:
            raise InvalidParameters(f"t_end must be > 0, got {self.t_end}")
        cps = self.checkpoint_times
        if list(cps) != sorted(cps) or len(set(cps)) != len(cps):
            raise InvalidParameters("checkpoint_times must be strictly increasing")
        if cps and (cps[0] <= 0 or cps[-1] > self.t_end * (1 + 1e-12)):
            raise InvalidParameters("checkpoint_times must lie in (0, t_end]")

    def targets(self) -> list[float]:
        """Instants the integrator must land on exactly, ending with ``t_end``."""
        ts = [t for t in self.checkpoint_times if t < self.t_end]
        return ts + [self.t_end]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["checkpoint_times"] = list(self.checkpoint_times)
        return d


def clip_to_target(t: float, dt: float, target: float) -> tuple[float, bool]:
    """Shorten ``dt`` to land on ``target``; also absorb a sliver remainder."""
    remaining = target - t
    if dt >= remaining * (1.0 - 1e-9):
        return remaining, True
    if remaining - dt < 1e-3 * dt:
        # avoid a vanishing last step before the target
        return 0.5 * remaining, False
    return dt, False
