"""Linear degradation operators with adjoints derived from the vjp contract.

Each operator's forward is built from exact-adjoint primitives (index
gathers, block means, valid convolutions) composed through
:mod:`p2l.diffmap`, so ``A^T u`` is obtained as ``map.vjp(., u)`` rather
than from a hand-derived transpose.  Measurements are stored flattened
with shape metadata; images are scaled to [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np
from scipy.signal import convolve2d

from . import diffmap
from .diffmap import Array, DiffMap
from .errors import DimensionError, ParameterError

KINDS = ("identity", "sr_avgpool", "gaussian_blur", "motion_blur",
         "inpaint_random", "inpaint_freeform")


@dataclass(frozen=True)
class Measurement:
    """A degraded observation ``y = A x + sigma_y * g`` stored flat."""

    y: Array
    sigma_y: float
    operator_id: str = ""
    seed: int | None = None


@dataclass(frozen=True)
class OperatorSpec:
    """Serializable recipe for :func:`make_operator`."""

    kind: str
    image_shape: tuple[int, int]
    factor: int = 2
    kernel: Array | None = None
    kernel_size: int = 9
    kernel_sigma: float = 1.5
    motion_intensity: float = 0.5
    drop_prob: float = 0.8
    mask: Array | None = None
    coverage: tuple[float, float] = (0.10, 0.20)
    stroke_thickness: int = 1
    seed: int = 0


@dataclass(frozen=True)
class LinearOperator:
    kind: str
    image_shape: tuple[int, int]
    map: DiffMap
    kernel: Array | None = None
    mask: Array | None = None
    factor: int | None = None
    operator_id: str = ""

    @property
    def input_shape(self) -> tuple[int, ...]:
        return self.map.input_shape

    @property
    def output_shape(self) -> tuple[int, ...]:
        return self.map.output_shape

    def apply(self, x: Array) -> Array:
        return diffmap.apply(self.map, x)


def adjoint(op: LinearOperator, u: Array) -> Array:
    """``A^T u`` via the vjp; the evaluation point is irrelevant for linear maps."""
    return diffmap.vjp(op.map, np.zeros(op.map.input_shape), u)


# ---------------------------------------------------------------------------
# primitives

def reflect_pad_map(shape: tuple[int, int], pad: int) -> DiffMap:
    """Mirror padding (edge not repeated) as a gather; vjp is the exact scatter-add."""
    h, w = shape
    if pad >= min(h, w):
        raise ParameterError(f"pad {pad} too large for image {shape}")
    idx = np.pad(np.arange(h * w).reshape(h, w), pad, mode="reflect").ravel()
    hp, wp = h + 2 * pad, w + 2 * pad

    def fwd(x: Array) -> Array:
        return x[idx]

    def back(x: Array, u: Array) -> Array:
        out = np.zeros(h * w)
        np.add.at(out, idx, u)
        return out

    return DiffMap((h * w,), (hp * wp,), fwd, back, name="reflect_pad")


def valid_conv_map(padded_shape: tuple[int, int], kernel: Array) -> DiffMap:
    """True 2-D convolution, valid part only; vjp is the full convolution
    with the flipped kernel."""
    hp, wp = padded_shape
    kernel = np.asarray(kernel, dtype=float)
    kh, kw = kernel.shape
    oh, ow = hp - kh + 1, wp - kw + 1
    flipped = kernel[::-1, ::-1]

    def fwd(x: Array) -> Array:
        return convolve2d(x.reshape(hp, wp), kernel, mode="valid").ravel()

    def back(x: Array, u: Array) -> Array:
        return convolve2d(u.reshape(oh, ow), flipped, mode="full").ravel()

    return DiffMap((hp * wp,), (oh * ow,), fwd, back, name="conv_valid")


def avgpool_map(shape: tuple[int, int], factor: int) -> DiffMap:
    h, w = shape
    oh, ow = h // factor, w // factor
    inv = 1.0 / (factor * factor)

    def fwd(x: Array) -> Array:
        return x.reshape(oh, factor, ow, factor).mean(axis=(1, 3)).ravel()

    def back(x: Array, u: Array) -> Array:
        up = np.repeat(np.repeat(u.reshape(oh, ow), factor, axis=0), factor, axis=1)
        return (up * inv).ravel()

    return DiffMap((h * w,), (oh * ow,), fwd, back, name=f"avgpool{factor}")


def mask_map(mask: Array) -> DiffMap:
    """Keep the True pixels of a boolean grid; vjp scatters back (rows orthonormal)."""
    mask = np.asarray(mask, dtype=bool)
    kept = np.flatnonzero(mask.ravel())
    n = mask.size

    def fwd(x: Array) -> Array:
        return x[kept]

    def back(x: Array, u: Array) -> Array:
        out = np.zeros(n)
        out[kept] = u
        return out

    return DiffMap((n,), (kept.size,), fwd, back, name="mask")


# ---------------------------------------------------------------------------
# kernels and masks

def gaussian_kernel(size: int, sigma: float) -> Array:
    if size % 2 == 0 or size < 1:
        raise ParameterError(f"kernel size must be odd and >= 1, got {size}")
    if sigma <= 0:
        raise ParameterError("sigma must be positive")
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-0.5 * (r / sigma) ** 2)
    k = np.outer(g, g)
    return k / k.sum()


def make_motion_kernel(size: int, intensity: float, seed: int = 0) -> Array:
    """Rasterize a seeded random walk into a normalized motion-blur kernel.

    The walk starts at the kernel center heading along the row axis; the
    heading angle diffuses with magnitude proportional to ``intensity``,
    so intensity 0 gives a straight horizontal streak and larger values
    give increasingly tortuous trails.  Deterministic under ``seed``.
    """
    if size % 2 == 0 or size < 1:
        raise ParameterError(f"kernel size must be odd, got {size}")
    if not 0.0 <= intensity <= 1.0:
        raise ParameterError("intensity must be in [0, 1]")
    rng = np.random.default_rng(seed)
    k = np.zeros((size, size))
    c = (size - 1) / 2.0
    steps = max(3 * size, 16)
    length = 0.85 * size
    pos = np.array([c, c - length / 2.0])
    theta = 0.0
    ds = length / steps
    for _ in range(steps + 1):
        r, q = pos
        # bilinear splat; walk is clipped to the kernel support
        r = min(max(r, 0.0), size - 1.0)
        q = min(max(q, 0.0), size - 1.0)
        r0, q0 = int(np.floor(r)), int(np.floor(q))
        fr, fq = r - r0, q - q0
        for dr, dq, wgt in ((0, 0, (1 - fr) * (1 - fq)), (1, 0, fr * (1 - fq)),
                            (0, 1, (1 - fr) * fq), (1, 1, fr * fq)):
            rr, qq = r0 + dr, q0 + dq
            if rr < size and qq < size:
                k[rr, qq] += wgt
        theta += intensity * 0.9 * rng.standard_normal()
        pos = pos + ds * np.array([np.sin(theta), np.cos(theta)])
    return k / k.sum()


def freeform_mask(shape: tuple[int, int], coverage: tuple[float, float] = (0.10, 0.20),
                  thickness: int = 1, seed: int = 0) -> Array:
    """Boolean keep-grid with seeded thick strokes dropped until the target
    fraction (drawn uniformly from ``coverage``) of pixels is removed."""
    lo, hi = coverage
    if not (0.0 <= lo <= hi < 1.0):
        raise ParameterError(f"bad coverage range {coverage}")
    h, w = shape
    rng = np.random.default_rng(seed)
    target = rng.uniform(lo, hi)
    dropped = np.zeros((h, w), dtype=bool)
    yy, xx = np.mgrid[0:h, 0:w]
    while dropped.mean() < target:
        r = np.array([rng.uniform(0, h - 1), rng.uniform(0, w - 1)])
        theta = rng.uniform(0, 2 * np.pi)
        for _ in range(rng.integers(max(h, w) // 2, max(h, w))):
            dist2 = (yy - r[0]) ** 2 + (xx - r[1]) ** 2
            dropped |= dist2 <= thickness ** 2
            theta += 0.5 * rng.standard_normal()
            r = r + np.array([np.sin(theta), np.cos(theta)])
            r = np.clip(r, 0, [h - 1, w - 1])
            if dropped.mean() >= target:
                break
    return ~dropped


# ---------------------------------------------------------------------------
# operator construction

def make_operator(spec: OperatorSpec) -> LinearOperator:
    h, w = spec.image_shape
    if h < 1 or w < 1:
        raise ParameterError(f"bad image shape {spec.image_shape}")
    shape = (h, w)
    ident = f"{spec.kind}@{h}x{w}#{spec.seed}"

    if spec.kind == "identity":
        return LinearOperator("identity", shape, diffmap.identity_map((h * w,)),
                              operator_id=ident)

    if spec.kind == "sr_avgpool":
        f = int(spec.factor)
        if f < 1 or h % f != 0 or w % f != 0:
            raise ParameterError(f"pooling factor {f} must divide image shape {shape}")
        return LinearOperator("sr_avgpool", shape, avgpool_map(shape, f),
                              factor=f, operator_id=ident)

    if spec.kind in ("gaussian_blur", "motion_blur"):
        if spec.kernel is not None:
            kernel = np.asarray(spec.kernel, dtype=float)
        elif spec.kind == "gaussian_blur":
            kernel = gaussian_kernel(spec.kernel_size, spec.kernel_sigma)
        else:
            kernel = make_motion_kernel(spec.kernel_size, spec.motion_intensity, spec.seed)
        if kernel.ndim != 2 or kernel.shape[0] % 2 == 0 or kernel.shape[1] % 2 == 0:
            raise ParameterError(f"kernel must be odd-sized 2-D, got {kernel.shape}")
        if np.any(kernel < 0) or abs(kernel.sum() - 1.0) > 1e-9:
            raise ParameterError("kernel must be nonnegative and sum to 1")
        pad = kernel.shape[0] // 2
        m = diffmap.compose(valid_conv_map((h + 2 * pad, w + 2 * pad), kernel),
                            reflect_pad_map(shape, pad))
        return LinearOperator(spec.kind, shape, m, kernel=kernel, operator_id=ident)

    if spec.kind == "inpaint_random":
        p = float(spec.drop_prob)
        if not 0.0 <= p <= 1.0:
            raise ParameterError(f"drop probability must be in [0, 1], got {p}")
        rng = np.random.default_rng(spec.seed)
        mask = rng.random((h, w)) >= p
        if not mask.any():
            raise ParameterError("mask drops every pixel; lower the drop probability")
        return LinearOperator("inpaint_random", shape, mask_map(mask),
                              mask=mask, operator_id=ident)

    if spec.kind == "inpaint_freeform":
        if spec.mask is not None:
            mask = np.asarray(spec.mask, dtype=bool)
            if mask.shape != shape:
                raise DimensionError(f"mask shape {mask.shape} != image shape {shape}")
        else:
            mask = freeform_mask(shape, spec.coverage, spec.stroke_thickness, spec.seed)
        return LinearOperator("inpaint_freeform", shape, mask_map(mask),
                              mask=mask, operator_id=ident)

    raise ParameterError(f"unknown operator kind {spec.kind!r}")


def dot_product_check(op: LinearOperator, trials: int = 100, seed: int = 0) -> float:
    """Max relative adjoint mismatch ``|<Ax,u> - <x,A^Tu>|`` over random pairs."""
    if trials < 1:
        raise ParameterError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        x = rng.standard_normal(op.map.input_shape)
        u = rng.standard_normal(op.map.output_shape)
        lhs = float(np.vdot(op.apply(x), u))
        rhs = float(np.vdot(x, adjoint(op, u)))
        worst = max(worst, abs(lhs - rhs) / (abs(lhs) + np.finfo(float).eps))
    return worst


def add_noise(y_clean: Array, sigma_y: float, seed: int, operator_id: str = "") -> Measurement:
    """White Gaussian noise; identical seed gives an identical draw."""
    if sigma_y < 0:
        raise ParameterError("sigma_y must be nonnegative")
    y_clean = np.asarray(y_clean, dtype=float)
    g = np.random.default_rng(seed).standard_normal(y_clean.shape)
    y = y_clean + sigma_y * g
    if not np.all(np.isfinite(y)):
        raise ParameterError("non-finite measurement")
    return Measurement(y=y, sigma_y=float(sigma_y), operator_id=operator_id, seed=seed)


# ---------------------------------------------------------------------------
# config serialization

def spec_to_dict(spec: OperatorSpec) -> dict[str, Any]:
    d: dict[str, Any] = {
        "kind": spec.kind,
        "image_shape": list(spec.image_shape),
        "seed": spec.seed,
    }
    if spec.kind == "sr_avgpool":
        d["factor"] = spec.factor
    elif spec.kind in ("gaussian_blur", "motion_blur"):
        if spec.kernel is not None:
            d["kernel"] = np.asarray(spec.kernel).tolist()
        else:
            d["kernel_size"] = spec.kernel_size
            if spec.kind == "gaussian_blur":
                d["kernel_sigma"] = spec.kernel_sigma
            else:
                d["motion_intensity"] = spec.motion_intensity
    elif spec.kind == "inpaint_random":
        d["drop_prob"] = spec.drop_prob
    elif spec.kind == "inpaint_freeform":
        if spec.mask is not None:
            d["mask"] = np.asarray(spec.mask, dtype=bool).astype(int).tolist()
        else:
            d["coverage"] = list(spec.coverage)
            d["stroke_thickness"] = spec.stroke_thickness
    return d


def spec_from_dict(d: dict[str, Any]) -> OperatorSpec:
    spec = OperatorSpec(kind=d["kind"], image_shape=tuple(d["image_shape"]),
                        seed=int(d.get("seed", 0)))
    if "factor" in d:
        spec = replace(spec, factor=int(d["factor"]))
    if "kernel" in d:
        spec = replace(spec, kernel=np.asarray(d["kernel"], dtype=float))
    if "kernel_size" in d:
        spec = replace(spec, kernel_size=int(d["kernel_size"]))
    if "kernel_sigma" in d:
        spec = replace(spec, kernel_sigma=float(d["kernel_sigma"]))
    if "motion_intensity" in d:
        spec = replace(spec, motion_intensity=float(d["motion_intensity"]))
    if "drop_prob" in d:
        spec = replace(spec, drop_prob=float(d["drop_prob"]))
    if "mask" in d:
        spec = replace(spec, mask=np.asarray(d["mask"], dtype=bool))
    if "coverage" in d:
        spec = replace(spec, coverage=tuple(d["coverage"]))
    if "stroke_thickness" in d:
        spec = replace(spec, stroke_thickness=int(d["stroke_thickness"]))
    return spec
