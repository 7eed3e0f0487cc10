"""Numerical tolerances shared by every pipeline stage."""
from __future__ import annotations

from dataclasses import dataclass, replace, asdict


@dataclass(frozen=True)
class Settings:
    """Tolerances, grids and horizons.

    ``rtol``/``atol`` drive the embedded Runge-Kutta integrator for nonlinear
    and variational flows.  Matrix flows of the linear system (fundamental
    matrices, transition matrices) use ``linear_atol``, which is tiny on
    purpose: their entries decay or grow exponentially and only relative
    error control keeps products such as X(t,0) X(0,s) accurate.
    """

    rtol: float = 1e-8
    atol: float = 1e-10
    linear_atol: float = 1e-250
    max_step: float = 0.02
    method: str = "RK45"

    quad_tol: float = 1e-10
    horizon_min: float = 10.0
    horizon_cap: float = 200.0

    fp_tol: float = 1e-10
    max_iter: int = 200
    q_floor: float = 0.01
    grid_spacing: float = 0.05

    t_sup: float = 10.0
    n_sup: int = 101

    def __post_init__(self):
        for name in ("rtol", "atol", "linear_atol", "max_step", "quad_tol", "fp_tol", "grid_spacing"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.method not in ("RK45", "DOP853"):
            raise ValueError(f"unsupported integrator {self.method!r}")
        if self.n_sup < 1 or self.max_iter < 1:
            raise ValueError("grid sizes and iteration caps must be positive")

    def refined(self, factor: float = 0.5) -> "Settings":
        """Scale every tolerance and the working-grid spacing by ``factor``."""
        return replace(
            self,
            rtol=self.rtol * factor,
            atol=self.atol * factor,
            quad_tol=self.quad_tol * factor,
            fp_tol=self.fp_tol * factor,
            grid_spacing=self.grid_spacing * factor,
        )

    def with_overrides(self, **kwargs) -> "Settings":
        return replace(self, **kwargs)

    def to_dict(self) -> dict:
        return asdict(self)


DEFAULT = Settings()
