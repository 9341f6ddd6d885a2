from __future__ import annotations

from dataclasses import dataclass

from ..errors import OutOfRange


@dataclass(frozen=True)
class NuSchedule:
    """Geometric ramp of the tanh scale from ``nu_start`` (epoch 0) to ``nu_end`` (epoch M)."""

    nu_start: float = 1.0
    nu_end: float = 1000.0
    total_epochs: int = 100

    def __post_init__(self):
        if self.nu_start <= 0 or self.nu_end < self.nu_start:
            raise OutOfRange(f"need 0 < nu_start <= nu_end, got {self.nu_start}, {self.nu_end}")
        if self.total_epochs < 0:
            raise OutOfRange("total_epochs must be >= 0")

    @classmethod
    def for_training(cls, epochs: int, nu_start: float = 1.0, nu_end: float = 1000.0) -> "NuSchedule":
        # epochs 0..epochs-1 map onto nu_0..nu_M so the last epoch runs at nu_end
        return cls(nu_start, nu_end, max(epochs - 1, 0))

    def __iter__(self):
        return (nu_at(self, e) for e in range(self.total_epochs + 1))


def nu_at(schedule: NuSchedule, epoch: int) -> float:
    M = schedule.total_epochs
    if not 0 <= epoch <= M:
        raise OutOfRange(f"epoch {epoch} outside schedule [0, {M}]")
    if epoch == M:
        return float(schedule.nu_end)
    if epoch == 0:
        return float(schedule.nu_start)
    return float(schedule.nu_start * (schedule.nu_end / schedule.nu_start) ** (epoch / M))
