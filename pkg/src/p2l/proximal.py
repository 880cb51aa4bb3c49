"""Conjugate-gradient solver and the two data-consistency maps.

The proximal map solves ``argmin_x 0.5 ||y - A x||^2 + (lam/2) ||x - a||^2``
through its normal equations ``(A^T A + lam I) x = A^T y + lam a`` using
matrix-free CG with the operator adjoint supplied by the vjp contract.
The gluing alternative is the hard affine projection
``A^T y + (I - A^T A) a``, which writes measurement noise straight into
the output.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .diffmap import Array
from .errors import NumericError, ParameterError, SPDViolationError
from .operators import LinearOperator, Measurement, adjoint


@dataclass(frozen=True)
class ProxConfig:
    lam: float = 1.0
    cg_iters: int = 10
    cg_tol: float = 1e-6

    def __post_init__(self):
        if self.lam <= 0:
            raise ParameterError("lam must be positive")
        if self.cg_iters < 1:
            raise ParameterError("cg_iters must be >= 1")
        if self.cg_tol <= 0:
            raise ParameterError("cg_tol must be positive")


def cg_solve(apply_spd: Callable[[Array], Array], b: Array, x_init: Array,
             iters: int, tol: float) -> tuple[Array, list[float]]:
    """Standard CG on an SPD system; returns the iterate and the relative
    residual after each iteration (entry 0 is the warm-start residual)."""
    if tol <= 0:
        raise ParameterError("tol must be positive")
    if iters < 1:
        raise ParameterError("iters must be >= 1")
    b = np.asarray(b, dtype=float)
    x = np.asarray(x_init, dtype=float).copy()
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        bnorm = 1.0
    r = b - apply_spd(x)
    history = [float(np.linalg.norm(r) / bnorm)]
    if history[0] <= tol:
        return x, history
    p = r.copy()
    rs = float(r @ r)
    for _ in range(iters):
        mp = apply_spd(p)
        curv = float(p @ mp)
        if not np.isfinite(curv):
            raise NumericError("non-finite curvature in CG")
        if curv <= 0.0:
            raise SPDViolationError(f"negative curvature {curv}; operator is not SPD")
        a = rs / curv
        x = x + a * p
        r = r - a * mp
        if not np.all(np.isfinite(x)):
            raise NumericError("non-finite CG iterate")
        rs_new = float(r @ r)
        history.append(float(np.sqrt(rs_new) / bnorm))
        if history[-1] <= tol:
            break
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x, history


def prox_gamma(op: LinearOperator, y: Measurement, x_anchor: Array,
               cfg: ProxConfig) -> Array:
    """Solve the anchored least-squares problem, warm-started at the anchor."""
    x_anchor = np.asarray(x_anchor, dtype=float)

    def apply_spd(x: Array) -> Array:
        return adjoint(op, op.apply(x)) + cfg.lam * x

    b = adjoint(op, y.y) + cfg.lam * x_anchor
    x, _ = cg_solve(apply_spd, b, x_anchor, cfg.cg_iters, cfg.cg_tol)
    return x


def glue_gamma(op: LinearOperator, y: Measurement, x_anchor: Array) -> Array:
    """Hard projection onto the measurement-consistent affine subspace."""
    x_anchor = np.asarray(x_anchor, dtype=float)
    return adjoint(op, y.y) + x_anchor - adjoint(op, op.apply(x_anchor))
