"""Differentiable maps with hand-written vector-Jacobian products.

A :class:`DiffMap` bundles a forward function ``R^a -> R^b`` with a vjp
closure returning ``J(x)^T u``.  Operator adjoints and every gradient used
by the samplers are obtained by composing these maps, so instead of a
tracing framework each vjp is written by hand and certified numerically
with :func:`check_vjp`.  All arithmetic is double precision.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DimensionError, NumericError

Array = np.ndarray


@dataclass(frozen=True)
class DiffMap:
    """A deterministic map with its transpose-Jacobian action.

    ``forward`` maps an array of ``input_shape`` to one of ``output_shape``;
    ``vjp(x, u)`` returns ``J(x)^T u`` for a cotangent ``u`` of
    ``output_shape``.  Instances are immutable and safe to share.
    """

    input_shape: tuple[int, ...]
    output_shape: tuple[int, ...]
    forward: Callable[[Array], Array]
    vjp: Callable[[Array, Array], Array]
    name: str = "map"


def _require_shape(what: str, arr: Array, shape: tuple[int, ...]) -> Array:
    arr = np.asarray(arr, dtype=float)
    if arr.shape != tuple(shape):
        raise DimensionError(f"{what}: expected shape {tuple(shape)}, got {arr.shape}")
    return arr


def apply(m: DiffMap, x: Array) -> Array:
    """Evaluate ``m.forward(x)`` with shape validation on both ends."""
    x = _require_shape(f"{m.name} input", x, m.input_shape)
    y = np.asarray(m.forward(x), dtype=float)
    return _require_shape(f"{m.name} output", y, m.output_shape)


def vjp(m: DiffMap, x: Array, u: Array) -> Array:
    """Return ``J(x)^T u`` with shape validation."""
    x = _require_shape(f"{m.name} input", x, m.input_shape)
    u = _require_shape(f"{m.name} cotangent", u, m.output_shape)
    g = np.asarray(m.vjp(x, u), dtype=float)
    return _require_shape(f"{m.name} vjp output", g, m.input_shape)


def compose(outer: DiffMap, inner: DiffMap) -> DiffMap:
    """Chain two maps: forward is ``outer(inner(x))``, vjp applies the chain rule."""
    if inner.output_shape != outer.input_shape:
        raise DimensionError(
            f"cannot compose {outer.name} after {inner.name}: "
            f"{inner.output_shape} != {outer.input_shape}"
        )

    def fwd(x: Array) -> Array:
        return outer.forward(inner.forward(x))

    def back(x: Array, u: Array) -> Array:
        mid = inner.forward(x)
        return inner.vjp(x, outer.vjp(mid, u))

    return DiffMap(inner.input_shape, outer.output_shape, fwd, back,
                   name=f"{outer.name}.{inner.name}")


def identity_map(shape: tuple[int, ...]) -> DiffMap:
    return DiffMap(tuple(shape), tuple(shape),
                   lambda x: x.copy(), lambda x, u: u.copy(), name="identity")


def scale_map(shape: tuple[int, ...], c: float) -> DiffMap:
    return DiffMap(tuple(shape), tuple(shape),
                   lambda x: c * x, lambda x, u: c * u, name=f"scale{c}")


def from_matrix(w: Array, name: str = "linear") -> DiffMap:
    """Dense linear map ``x -> W x`` with exact adjoint ``u -> W^T u``."""
    w = np.asarray(w, dtype=float)
    return DiffMap((w.shape[1],), (w.shape[0],),
                   lambda x: w @ x, lambda x, u: w.T @ u, name=name)


def affine_map(w: Array, b: Array, name: str = "affine") -> DiffMap:
    w = np.asarray(w, dtype=float)
    b = np.asarray(b, dtype=float)
    return DiffMap((w.shape[1],), (w.shape[0],),
                   lambda x: w @ x + b, lambda x, u: w.T @ u, name=name)


def elementwise_map(shape: tuple[int, ...], f: Callable[[Array], Array],
                    df: Callable[[Array], Array], name: str = "elementwise") -> DiffMap:
    """Pointwise map with derivative ``df``; vjp is ``df(x) * u``."""
    return DiffMap(tuple(shape), tuple(shape),
                   lambda x: f(x), lambda x, u: df(x) * u, name=name)


def tanh_map(shape: tuple[int, ...]) -> DiffMap:
    return elementwise_map(shape, np.tanh, lambda x: 1.0 - np.tanh(x) ** 2, name="tanh")


def materialize_linear(m: DiffMap) -> Array:
    """Dense matrix of a *linear* map, column by column via forward sweeps."""
    n = int(np.prod(m.input_shape))
    cols = []
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        cols.append(apply(m, e.reshape(m.input_shape)).ravel())
    return np.stack(cols, axis=1)


def materialize_jacobian_t(m: DiffMap, x: Array) -> Array:
    """Dense ``J(x)^T`` of any map, row sweeps over output basis cotangents."""
    x = np.asarray(x, dtype=float)
    mdim = int(np.prod(m.output_shape))
    rows = []
    for i in range(mdim):
        u = np.zeros(mdim)
        u[i] = 1.0
        rows.append(vjp(m, x, u.reshape(m.output_shape)).ravel())
    # stack as columns so result is (input_dim, output_dim) = J^T
    return np.stack(rows, axis=1)


@dataclass(frozen=True)
class VjpReport:
    max_rel_err: float
    passed: bool


def check_vjp(m: DiffMap, x: Array, trials: int = 20, step: float = 1e-5,
              tol: float = 1e-6, seed: int = 0) -> VjpReport:
    """Certify a vjp against central finite differences of the forward map.

    For random unit cotangents ``u`` and directions ``d`` compares
    ``<u, (f(x+h d) - f(x-h d)) / (2h)>`` with ``<vjp(x, u), d>``; passes iff
    the max relative error over all trials is at most ``tol``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    x = _require_shape(f"{m.name} input", x, m.input_shape)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        u = rng.standard_normal(m.output_shape)
        u /= np.linalg.norm(u)
        d = rng.standard_normal(m.input_shape)
        d /= np.linalg.norm(d)
        yp = np.asarray(m.forward(x + step * d), dtype=float)
        ym = np.asarray(m.forward(x - step * d), dtype=float)
        if not (np.all(np.isfinite(yp)) and np.all(np.isfinite(ym))):
            raise NumericError(f"{m.name}: non-finite forward output in check_vjp")
        lhs = float(np.vdot(u, (yp - ym) / (2.0 * step)))
        rhs = float(np.vdot(vjp(m, x, u), d))
        rel = abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-12)
        worst = max(worst, rel)
    return VjpReport(max_rel_err=worst, passed=worst <= tol)
