import numpy as np
import numpy.typing as npt

from dataclasses import dataclass

FloatArray = npt.NDArray[np.float64]


@dataclass
class Settings:
    jobs: int = 0
    zero_tolerance: float = 1e-8
    marginal_grid: int = 360
    icosphere_level: int = 3

    @property
    def worker_count(self) -> int | None:
        """Worker processes for Monte-Carlo runs, None meaning all cores."""
        return self.jobs if self.jobs > 0 else None


def as_unit(v: npt.ArrayLike) -> FloatArray:
    arr = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(arr)

    if not np.isfinite(norm) or norm == 0.0:
        raise ValueError('Cannot normalise a zero or non-finite vector')

    return arr / norm
