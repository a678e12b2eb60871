"""Coefficient tensors and source terms.

Vector fields elsewhere in the package are plain callables mapping points
``(..., 3)`` to values ``(..., 3)``; a :class:`~whitney_maxwell.derham.DiscreteField`
is accepted too and is evaluated cell by cell.
"""

from __future__ import annotations

from typing import Callable

import numpy as np


class CoefficientError(ValueError):
    """Data violates symmetry, ellipticity or finiteness requirements."""


class TensorField:
    """Symmetric 3x3 coefficient: constant, cellwise constant, or analytic.

    Cellwise data must be aligned with the mesh; analytic tensors are sampled
    at quadrature points.
    """

    def __init__(self, constant=None, per_cell=None, func: Callable | None = None,
                 lower_bound: float | None = None, name: str = ""):
        if sum(x is not None for x in (constant, per_cell, func)) != 1:
            raise ValueError("give exactly one of constant, per_cell, func")
        self.constant = None if constant is None else np.array(constant, dtype=float).reshape(3, 3)
        self.per_cell = None if per_cell is None else np.array(per_cell, dtype=float).reshape(-1, 3, 3)
        self.func = func
        self.lower_bound = lower_bound
        self.name = name

    @classmethod
    def identity(cls) -> "TensorField":
        return cls(constant=np.eye(3), lower_bound=1.0, name="identity")

    @classmethod
    def scalar(cls, value: float) -> "TensorField":
        return cls(constant=float(value) * np.eye(3), lower_bound=float(value), name=f"{value}*I")

    @classmethod
    def zero(cls) -> "TensorField":
        return cls.scalar(0.0)

    @classmethod
    def cellwise(cls, values) -> "TensorField":
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None, None] * np.eye(3)
        return cls(per_cell=values, name="per-cell")

    @classmethod
    def analytic(cls, func: Callable) -> "TensorField":
        return cls(func=func, name=getattr(func, "__name__", "analytic"))

    def __mul__(self, c: float) -> "TensorField":
        c = float(c)
        lb = None if self.lower_bound is None else c * self.lower_bound
        if self.constant is not None:
            return TensorField(constant=c * self.constant, lower_bound=lb, name=f"{c}*{self.name}")
        if self.per_cell is not None:
            return TensorField(per_cell=c * self.per_cell, lower_bound=lb, name=f"{c}*{self.name}")
        f = self.func
        return TensorField(func=lambda x: c * np.asarray(f(x)), lower_bound=lb, name=f"{c}*{self.name}")

    __rmul__ = __mul__

    @property
    def is_zero(self) -> bool:
        if self.constant is not None:
            return not np.any(self.constant)
        if self.per_cell is not None:
            return not np.any(self.per_cell)
        return False

    def at(self, points: np.ndarray) -> np.ndarray:
        """Values at physical points ``(C, nq, 3)`` -> ``(C, nq, 3, 3)``."""
        C, nq = points.shape[:2]
        if self.constant is not None:
            vals = np.broadcast_to(self.constant, (C, nq, 3, 3))
        elif self.per_cell is not None:
            if self.per_cell.shape[0] != C:
                raise CoefficientError(f"per-cell tensor has {self.per_cell.shape[0]} entries "
                                       f"for a mesh with {C} cells")
            vals = np.broadcast_to(self.per_cell[:, None], (C, nq, 3, 3))
        else:
            vals = np.asarray(self.func(points), dtype=float)
            if vals.shape != (C, nq, 3, 3):
                raise CoefficientError(f"tensor function returned shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise CoefficientError(f"coefficient {self.name!r} has non-finite values")
        asym = np.abs(vals - np.swapaxes(vals, -1, -2)).max(initial=0.0)
        scale = np.abs(vals).max(initial=0.0)
        if asym > 1e-12 * scale:
            raise CoefficientError(f"coefficient {self.name!r} is not symmetric "
                                   f"(asymmetry {asym:.2e})")
        return vals

    def check(self, points: np.ndarray, kind: str) -> float:
        """Sampled smallest eigenvalue; raises unless SPD (kind='spd') or PSD (kind='psd')."""
        vals = self.at(points)
        if self.constant is not None:
            sample = self.constant[None]
        elif self.per_cell is not None:
            sample = self.per_cell
        else:
            sample = vals.reshape(-1, 3, 3)
        eig = np.linalg.eigvalsh(0.5 * (sample + np.swapaxes(sample, -1, -2)))
        lo = float(eig.min()) if eig.size else 0.0
        hi = float(np.abs(eig).max()) if eig.size else 0.0
        if kind == "spd" and not lo > 0.0:
            raise CoefficientError(f"coefficient {self.name!r} is not uniformly positive "
                                   f"definite (sampled min eigenvalue {lo:.3e})")
        if kind == "psd" and lo < -1e-12 * max(hi, 1.0):
            raise CoefficientError(f"coefficient {self.name!r} is not positive semi-definite "
                                   f"(sampled min eigenvalue {lo:.3e})")
        return lo


class SourceField:
    """Current density f(x, t); ``func`` maps points (..., 3) and a time to (..., 3)."""

    def __init__(self, func: Callable | None = None, name: str = ""):
        self.func = func
        self.name = name or ("zero" if func is None else getattr(func, "__name__", "source"))

    @classmethod
    def zero(cls) -> "SourceField":
        return cls(None, "zero")

    @property
    def is_zero(self) -> bool:
        return self.func is None

    def __call__(self, x, t: float) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.func is None:
            return np.zeros_like(x)
        vals = np.asarray(self.func(x, t), dtype=float)
        if vals.shape != x.shape:
            raise CoefficientError(f"source returned shape {vals.shape} for points {x.shape}")
        return vals
