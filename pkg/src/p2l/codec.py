"""Latent autoencoder pairs and the decode-encode fixed-point experiment.

The perfect codec is an orthogonal linear pair (decoder = encoder
transpose), so encode(decode(z)) = z exactly and decode(encode(x)) is
the orthogonal projection onto the decoder range.  An imperfection knob
perturbs the decoder to emulate autoencoders whose decode-encode
iteration drifts instead of settling on a fixed point.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import diffmap
from .diffmap import Array, DiffMap
from .errors import NumericError, ParameterError

CODEC_KINDS = ("linear_orthogonal", "linear_perturbed", "mlp_tanh")


@dataclass(frozen=True)
class LatentCodec:
    kind: str
    n: int
    k: int
    imperfection: float
    encoder: DiffMap
    decoder: DiffMap
    weights: tuple[Array, ...] = ()

    def encode(self, x: Array) -> Array:
        return diffmap.apply(self.encoder, x)

    def decode(self, z: Array) -> Array:
        return diffmap.apply(self.decoder, z)

    @property
    def is_linear(self) -> bool:
        return self.kind.startswith("linear") or self.kind == "identity"


def _orthonormal_rows(n: int, k: int, rng: np.random.Generator) -> Array:
    q, _ = np.linalg.qr(rng.standard_normal((n, k)))
    return q.T  # (k, n), orthonormal rows


def make_codec(kind: str, n: int, k: int, imperfection: float = 0.0,
               seed: int = 0, hidden: int | None = None) -> LatentCodec:
    """Build an encoder/decoder pair.

    linear_orthogonal: encoder has orthonormal rows, decoder is its
    transpose.  linear_perturbed: decoder = transpose + imperfection times
    a seeded random matrix scaled to unit spectral norm.  mlp_tanh: one
    hidden tanh layer per direction, weights seeded; vjps come from the
    composed map primitives.
    """
    if not 1 <= k < n:
        raise ParameterError(f"need 1 <= k < n, got k={k}, n={n}")
    if imperfection < 0:
        raise ParameterError("imperfection must be nonnegative")
    rng = np.random.default_rng(seed)

    if kind == "linear_orthogonal":
        e = _orthonormal_rows(n, k, rng)
        d = e.T
        return LatentCodec(kind, n, k, 0.0,
                           diffmap.from_matrix(e, "encoder"),
                           diffmap.from_matrix(d, "decoder"),
                           weights=(e, d))

    if kind == "linear_perturbed":
        e = _orthonormal_rows(n, k, rng)
        p = rng.standard_normal((n, k))
        p /= np.linalg.norm(p, ord=2)
        d = e.T + imperfection * p
        return LatentCodec(kind, n, k, imperfection,
                           diffmap.from_matrix(e, "encoder"),
                           diffmap.from_matrix(d, "decoder"),
                           weights=(e, d))

    if kind == "mlp_tanh":
        h = hidden if hidden is not None else 2 * k
        scale = 0.5

        def layer_pair(din: int, dmid: int, dout: int) -> tuple[DiffMap, tuple[Array, ...]]:
            w1 = scale * rng.standard_normal((dmid, din)) / np.sqrt(din)
            b1 = 0.1 * rng.standard_normal(dmid)
            w2 = scale * rng.standard_normal((dout, dmid)) / np.sqrt(dmid)
            b2 = 0.1 * rng.standard_normal(dout)
            m = diffmap.compose(diffmap.affine_map(w2, b2),
                                diffmap.compose(diffmap.tanh_map((dmid,)),
                                                diffmap.affine_map(w1, b1)))
            return m, (w1, b1, w2, b2)

        enc, we = layer_pair(n, h, k)
        dec, wd = layer_pair(k, h, n)
        return LatentCodec(kind, n, k, imperfection, enc, dec, weights=we + wd)

    raise ParameterError(f"unknown codec kind {kind!r}")


def autoencode_iterate(codec: LatentCodec, x0: Array, iters: int) -> Array:
    """Iterate x <- decode(encode(x)) and return the per-step L2 displacements."""
    if iters < 1:
        raise ParameterError("iters must be >= 1")
    x = np.asarray(x0, dtype=float)
    dists = np.empty(iters)
    for i in range(iters):
        x_next = codec.decode(codec.encode(x))
        if not np.all(np.isfinite(x_next)):
            raise NumericError(f"non-finite iterate at iteration {i}")
        dists[i] = np.linalg.norm(x_next - x)
        x = x_next
    return dists


def export_weights(codec: LatentCodec, path: str | Path) -> None:
    """Concatenated row-major float64 little-endian dump of all weight arrays."""
    blob = b"".join(np.ascontiguousarray(w, dtype="<f8").tobytes() for w in codec.weights)
    Path(path).write_bytes(blob)


def import_weights(path: str | Path, shapes: list[tuple[int, ...]]) -> list[Array]:
    raw = np.frombuffer(Path(path).read_bytes(), dtype="<f8")
    out = []
    off = 0
    for shp in shapes:
        size = int(np.prod(shp))
        out.append(raw[off:off + size].reshape(shp).astype(float))
        off += size
    if off != raw.size:
        raise ParameterError(f"weight blob has {raw.size} values, shapes need {off}")
    return out
