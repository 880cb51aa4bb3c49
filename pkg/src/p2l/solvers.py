"""The sampler zoo.

Latent-space solvers (p2l, p2l_adam, ldps, gml_dps, psld, ldir) run
reverse diffusion on the codec latent and guide it with the gradient of
the measurement residual norm, chained by hand through the operator
adjoint, the decoder vjp, the Tweedie map, and the score model's latent
vjp.  The p2l family additionally tunes the conditioning vector each step
and periodically projects the clean-latent estimate back onto the encoder
range through a data-consistency map.  Image-space solvers (dps, dds,
diffpir) bypass the codec and take a pixel-domain score model.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from . import diffmap
from .codec import LatentCodec
from .diffmap import Array
from .errors import CoverageError, OptimizationError, ParameterError, SolverError
from .operators import LinearOperator, Measurement, adjoint
from .proximal import ProxConfig, cg_solve, glue_gamma, prox_gamma
from .score import Embedding, NoiseSchedule, ScoreModel, null_embedding, tweedie

LATENT_SOLVERS = ("p2l", "p2l_adam", "ldps", "gml_dps", "psld", "ldir")
IMAGE_SOLVERS = ("dps", "dds", "diffpir")


@dataclass(frozen=True)
class RhoRule:
    """Likelihood step-size rule: a constant or a multiple of abar_t."""

    kind: str = "constant"  # constant | alpha_bar_scaled
    value: float = 1.0

    def at(self, schedule: NoiseSchedule, t: int) -> float:
        if self.kind == "constant":
            return self.value
        if self.kind == "alpha_bar_scaled":
            return self.value * schedule.abar(t)
        raise ParameterError(f"unknown rho rule {self.kind!r}")


@dataclass(frozen=True)
class AdamParams:
    beta1: float = 0.9
    beta2: float = 0.999
    eps_stab: float = 1e-8


@dataclass(frozen=True)
class DiffPirParams:
    zeta: float = 0.35
    lambda_dp: float = 35.0


@dataclass
class SolverConfig:
    solver: str = "p2l"
    nfe: int = 200
    eta: float = 0.0
    rho: RhoRule = field(default_factory=RhoRule)
    gamma_proj: int = 4
    lambda_prox: float = 1.0
    prox_cg_iters: int = 10
    prox_cg_tol: float = 1e-6
    prompt_iters: int = 0
    prompt_lr: float = 1e-4
    grad_type: str = "gd"  # gd | adam
    adam: AdamParams = field(default_factory=AdamParams)
    lambda_fix: float = 0.1
    dds_gamma: float = 1.0
    dds_cg_iters: int = 5
    diffpir: DiffPirParams = field(default_factory=DiffPirParams)
    seed: int = 0
    # resolved-ambiguity switches; defaults follow the gated, projected form
    gamma_variant: str = "prox"  # prox | glue
    project_every_step: bool = False
    renoise_unprojected: bool = False
    prompt_use_cond_mean: bool = True
    prompt_rho_shift: float = 1.0
    prompt_adam_persist: bool = False

    def validate(self) -> None:
        if self.solver not in LATENT_SOLVERS + IMAGE_SOLVERS:
            raise ParameterError(f"unknown solver {self.solver!r}")
        if self.nfe < 1:
            raise ParameterError("nfe must be >= 1")
        if not 0.0 <= self.eta <= 1.0:
            raise ParameterError("eta must be in [0, 1]")
        if self.gamma_proj < 1:
            raise ParameterError("gamma_proj must be >= 1")
        if self.prompt_iters < 0:
            raise ParameterError("prompt_iters must be >= 0")
        if self.grad_type not in ("gd", "adam"):
            raise ParameterError(f"unknown grad_type {self.grad_type!r}")
        if self.gamma_variant not in ("prox", "glue"):
            raise ParameterError(f"unknown gamma variant {self.gamma_variant!r}")
        for name in ("lambda_prox", "prompt_lr", "dds_gamma"):
            if getattr(self, name) <= 0:
                raise ParameterError(f"{name} must be positive")
        if self.lambda_fix < 0:
            raise ParameterError("lambda_fix must be nonnegative")


@dataclass
class StepRecord:
    t: int
    residual: float
    prompt_loss: float
    projected: bool
    embedding_norm: float
    prompt_lr_halved: bool = False


@dataclass
class Trajectory:
    solver: str
    records: list[StepRecord]
    final_x: Array
    final_z: Array | None = None
    cg_fallback: bool = False

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "residual", "prompt_loss", "projected", "embedding_norm"])
            for r in self.records:
                writer.writerow([r.t, format(r.residual, ".17g"),
                                 format(r.prompt_loss, ".17g"), int(r.projected),
                                 format(r.embedding_norm, ".17g")])


def timestep_sequence(T: int, nfe: int) -> list[int]:
    """Strictly decreasing steps from T to 1 with nfe entries."""
    if not 1 <= nfe <= T:
        raise ParameterError(f"need 1 <= nfe <= T, got nfe={nfe}, T={T}")
    if nfe == 1:
        return [T]
    ts = np.round(np.linspace(T, 1, nfe)).astype(int)
    if np.any(np.diff(ts) >= 0):
        raise ParameterError("timestep sequence is not strictly decreasing")
    return [int(t) for t in ts]


def ddim_transition(schedule: NoiseSchedule, z0_hat: Array, eps_hat: Array, t: int,
                    eta: float, seed: int | np.random.Generator | None = None,
                    t_prev: int | None = None) -> Array:
    """One DDIM step from t to t_prev (default t - 1; abar(0) is 1).

    With eta = 0 the step is deterministic; otherwise the usual variance
    split applies with sigma = eta * sqrt((1-ab_prev)/(1-ab_t))
    * sqrt(1 - ab_t/ab_prev).
    """
    schedule.check_t(t)
    if t_prev is None:
        t_prev = t - 1
    if not 0 <= t_prev < t:
        raise ParameterError(f"t_prev {t_prev} must be in [0, {t})")
    ab_t = schedule.abar(t)
    ab_p = schedule.abar(t_prev)
    z0_hat = np.asarray(z0_hat, dtype=float)
    eps_hat = np.asarray(eps_hat, dtype=float)
    if eta == 0.0:
        return np.sqrt(ab_p) * z0_hat + np.sqrt(1.0 - ab_p) * eps_hat
    sigma = eta * np.sqrt((1.0 - ab_p) / (1.0 - ab_t)) * np.sqrt(1.0 - ab_t / ab_p)
    out = (np.sqrt(ab_p) * z0_hat
           + np.sqrt(max(1.0 - ab_p - sigma ** 2, 0.0)) * eps_hat)
    if sigma > 0.0:
        rng = np.random.default_rng(seed)
        out = out + sigma * rng.standard_normal(z0_hat.shape)
    return out


def _tweedie_vjp(model: ScoreModel, z_t: Array, t: int, C, v: Array) -> Array:
    """Transpose of d z0 / d z_t applied to v, through the model's z-vjp."""
    ab = model.schedule.abar(t)
    return (v - np.sqrt(1.0 - ab) * model.vjp_z(z_t, t, C, v)) / np.sqrt(ab)


def likelihood_grad(model: ScoreModel, codec: LatentCodec, op: LinearOperator,
                    y: Measurement, z_t: Array, t: int,
                    C: Embedding | Array | None) -> tuple[Array, float]:
    """Gradient of ||A(D(z0(z_t))) - y|| (plain norm) and the residual norm.

    The gradient of the norm is defined as zero at a zero residual.
    """
    eps = model.predict(z_t, t, C)
    z0 = tweedie(model.schedule, z_t, t, eps)
    x0 = codec.decode(z0)
    r = op.apply(x0) - y.y
    rnorm = float(np.linalg.norm(r))
    if rnorm == 0.0:
        return np.zeros_like(np.asarray(z_t, dtype=float)), 0.0
    u = adjoint(op, r / rnorm)
    u = diffmap.vjp(codec.decoder, z0, u)
    return _tweedie_vjp(model, z_t, t, C, u), rnorm


def _norm_dir(p: Array) -> tuple[Array, float]:
    n = float(np.linalg.norm(p))
    if n == 0.0:
        return np.zeros_like(p), 0.0
    return p / n, n


def _fixed_point_penalty_grad(model: ScoreModel, codec: LatentCodec,
                              z_t: Array, t: int, C) -> Array:
    """Gradient wrt z_t of ||z0 - E(D(z0))||."""
    eps = model.predict(z_t, t, C)
    z0 = tweedie(model.schedule, z_t, t, eps)
    x0 = codec.decode(z0)
    p_hat, pn = _norm_dir(z0 - codec.encode(x0))
    if pn == 0.0:
        return np.zeros_like(z0)
    u = p_hat - diffmap.vjp(codec.decoder, z0,
                            diffmap.vjp(codec.encoder, x0, p_hat))
    return _tweedie_vjp(model, z_t, t, C, u)


def _glued_penalty_grad(model: ScoreModel, codec: LatentCodec, op: LinearOperator,
                        y: Measurement, z_t: Array, t: int, C) -> Array:
    """Gradient wrt z_t of ||z0 - E(A^T y + (I - A^T A) D(z0))||."""
    eps = model.predict(z_t, t, C)
    z0 = tweedie(model.schedule, z_t, t, eps)
    x0 = codec.decode(z0)
    anchor = glue_gamma(op, y, x0)
    p_hat, pn = _norm_dir(z0 - codec.encode(anchor))
    if pn == 0.0:
        return np.zeros_like(z0)
    w = diffmap.vjp(codec.encoder, anchor, p_hat)
    w = w - adjoint(op, op.apply(w))  # (I - A^T A) is symmetric
    u = p_hat - diffmap.vjp(codec.decoder, z0, w)
    return _tweedie_vjp(model, z_t, t, C, u)


@dataclass
class PromptResult:
    embedding: Embedding
    losses: list[float]
    lr_halved: bool
    adam_state: tuple[Array, Array, int]


def _prompt_loss_grad(model: ScoreModel, codec: LatentCodec, op: LinearOperator,
                      y: Measurement, z_t: Array, t: int, c: Array,
                      use_conditional_mean: bool, rho_shift: float) -> tuple[float, Array]:
    schedule = model.schedule
    ab = schedule.abar(t)
    eps = model.predict(z_t, t, c)
    z0 = tweedie(schedule, z_t, t, eps)
    if use_conditional_mean:
        # shift the posterior-mean latent one gradient step toward the
        # measurement before decoding; the shift is held constant when
        # differentiating in C (first-order approximation)
        x0u = codec.decode(z0)
        r_hat, rn = _norm_dir(op.apply(x0u) - y.y)
        if rn > 0.0:
            s = diffmap.vjp(codec.decoder, z0, adjoint(op, r_hat))
            z0 = z0 - rho_shift * s
    x0 = codec.decode(z0)
    r = op.apply(x0) - y.y
    loss = float(r @ r)
    u = diffmap.vjp(codec.decoder, z0, adjoint(op, 2.0 * r))
    grad_c = -np.sqrt(1.0 - ab) / np.sqrt(ab) * model.vjp_c(z_t, t, c, u)
    return loss, grad_c


def optimize_embedding(model: ScoreModel, codec: LatentCodec, op: LinearOperator,
                       y: Measurement, z_t: Array, t: int,
                       C_init: Embedding | Array, K: int, lr: float,
                       adam: AdamParams = AdamParams(),
                       use_conditional_mean: bool = True, rho_shift: float = 1.0,
                       adam_state: tuple[Array, Array, int] | None = None) -> PromptResult:
    """K Adam iterations on the squared measurement residual as a function
    of the conditioning vector, starting from C_init.

    If the loss history comes out non-monotone the whole pass is rerun
    once at half the learning rate and that result is accepted.
    """
    if K < 0:
        raise ParameterError("K must be >= 0")
    c0 = C_init.c if isinstance(C_init, Embedding) else np.asarray(C_init, dtype=float)
    d = model.embedding_dim
    if c0.shape != (d,):
        raise ParameterError(f"embedding shape {c0.shape} != ({d},)")
    state0 = adam_state if adam_state is not None else (np.zeros(d), np.zeros(d), 0)
    if K == 0:
        C_out = C_init if isinstance(C_init, Embedding) else Embedding(c0.copy(), "fixed")
        return PromptResult(C_out, [], False, state0)

    def attempt(lr_eff: float) -> tuple[Array, list[float], tuple[Array, Array, int]]:
        c = c0.copy()
        m, v, count = state0[0].copy(), state0[1].copy(), state0[2]
        losses: list[float] = []
        for k in range(K):
            loss, g = _prompt_loss_grad(model, codec, op, y, z_t, t, c,
                                        use_conditional_mean, rho_shift)
            if not np.isfinite(loss):
                raise OptimizationError(f"non-finite prompt loss at iteration {k}")
            losses.append(loss)
            count += 1
            m = adam.beta1 * m + (1.0 - adam.beta1) * g
            v = adam.beta2 * v + (1.0 - adam.beta2) * g * g
            m_hat = m / (1.0 - adam.beta1 ** count)
            v_hat = v / (1.0 - adam.beta2 ** count)
            c = c - lr_eff * m_hat / (np.sqrt(v_hat) + adam.eps_stab)
        return c, losses, (m, v, count)

    c, losses, state = attempt(lr)
    halved = False
    if any(losses[i + 1] > losses[i] for i in range(len(losses) - 1)):
        c, losses, state = attempt(lr / 2.0)
        halved = True
    return PromptResult(Embedding(c, "tuned"), losses, halved, state)


def project_to_encoder_range(codec: LatentCodec, op: LinearOperator, y: Measurement,
                             z0_hat: Array, prox_cfg: ProxConfig,
                             variant: str = "prox") -> Array:
    """Decode, apply the data-consistency map, re-encode."""
    x = codec.decode(z0_hat)
    if variant == "prox":
        x = prox_gamma(op, y, x, prox_cfg)
    elif variant == "glue":
        x = glue_gamma(op, y, x)
    else:
        raise ParameterError(f"unknown gamma variant {variant!r}")
    return codec.encode(x)


# ---------------------------------------------------------------------------
# solver loops

def _assemble_latent_grad(model, codec, op, y, z, t, C, cfg) -> tuple[Array, float]:
    g, resid = likelihood_grad(model, codec, op, y, z, t, C)
    if cfg.lambda_fix > 0 and cfg.solver == "gml_dps":
        g = g + cfg.lambda_fix * _fixed_point_penalty_grad(model, codec, z, t, C)
    elif cfg.lambda_fix > 0 and cfg.solver == "psld":
        g = g + cfg.lambda_fix * _glued_penalty_grad(model, codec, op, y, z, t, C)
    return g, resid


def _run_latent(model: ScoreModel, codec: LatentCodec, op: LinearOperator,
                y: Measurement, cfg: SolverConfig) -> Trajectory:
    schedule = model.schedule
    rng = np.random.default_rng(cfg.seed)
    z = rng.standard_normal(model.latent_shape)
    C: Embedding = null_embedding(model.embedding_dim)
    prox_cfg = ProxConfig(lam=cfg.lambda_prox, cg_iters=cfg.prox_cg_iters,
                          cg_tol=cfg.prox_cg_tol)
    steps = timestep_sequence(schedule.T, cfg.nfe)
    is_p2l = cfg.solver in ("p2l", "p2l_adam")
    use_adam = (cfg.solver in ("p2l_adam", "ldir")
                or (cfg.solver == "p2l" and cfg.grad_type == "adam"))
    m = np.zeros(model.latent_shape)
    v = np.zeros(model.latent_shape)
    prompt_state = None
    records: list[StepRecord] = []
    for i, t in enumerate(steps):
        t_prev = steps[i + 1] if i + 1 < len(steps) else 0
        prompt_loss = math.nan
        halved = False
        if is_p2l and cfg.prompt_iters > 0:
            res = optimize_embedding(model, codec, op, y, z, t, C,
                                     cfg.prompt_iters, cfg.prompt_lr, cfg.adam,
                                     cfg.prompt_use_cond_mean, cfg.prompt_rho_shift,
                                     adam_state=prompt_state)
            C = res.embedding
            prompt_loss = res.losses[-1]
            halved = res.lr_halved
            if cfg.prompt_adam_persist:
                prompt_state = res.adam_state
        eps = model.predict(z, t, C)
        z0 = tweedie(schedule, z, t, eps)
        projected = False
        z0_proj = z0
        if is_p2l and (cfg.project_every_step or t % cfg.gamma_proj == 0):
            z0_proj = project_to_encoder_range(codec, op, y, z0, prox_cfg,
                                               variant=cfg.gamma_variant)
            projected = True
        g, resid = _assemble_latent_grad(model, codec, op, y, z, t, C, cfg)
        renoise_from = z0 if (not is_p2l or cfg.renoise_unprojected) else z0_proj
        z_next = ddim_transition(schedule, renoise_from, eps, t, cfg.eta, rng, t_prev)
        rho = cfg.rho.at(schedule, t)
        if use_adam:
            # history update as written: moments divided by the constant
            # (1 - beta) factors, no power-of-t correction
            m = cfg.adam.beta1 * m + (1.0 - cfg.adam.beta1) * g
            v = cfg.adam.beta2 * v + (1.0 - cfg.adam.beta2) * g * g
            m_hat = m / (1.0 - cfg.adam.beta1)
            v_hat = v / (1.0 - cfg.adam.beta2)
            z = z_next - rho * m_hat / (np.sqrt(v_hat) + cfg.adam.eps_stab)
        else:
            z = z_next - rho * g
        if not np.all(np.isfinite(z)):
            raise SolverError(f"{cfg.solver}: non-finite latent at step t={t}")
        records.append(StepRecord(t=t, residual=resid, prompt_loss=prompt_loss,
                                  projected=projected,
                                  embedding_norm=float(np.linalg.norm(C.c)),
                                  prompt_lr_halved=halved))
    return Trajectory(cfg.solver, records, final_x=codec.decode(z), final_z=z)


def diffpir_data_solve(op: LinearOperator, y_vec: Array, x0_hat: Array,
                       lam: float) -> tuple[Array, bool]:
    """Closed-form solution of (A^T A + lam I) x = A^T y + lam x0 where the
    operator structure allows it; CG fallback (flagged) otherwise."""
    if lam <= 0:
        raise ParameterError("diffpir weight must be positive; needs sigma_y > 0")
    x0_hat = np.asarray(x0_hat, dtype=float)
    if op.kind == "identity":
        return (y_vec + lam * x0_hat) / (1.0 + lam), False
    if op.kind in ("inpaint_random", "inpaint_freeform"):
        out = x0_hat.copy()
        kept = np.flatnonzero(op.mask.ravel())
        out[kept] = (y_vec + lam * x0_hat[kept]) / (1.0 + lam)
        return out, False
    if op.kind == "sr_avgpool":
        f = op.factor
        h, w = op.image_shape
        b = adjoint(op, y_vec) + lam * x0_hat
        blocks = b.reshape(h // f, f, w // f, f).transpose(0, 2, 1, 3).reshape(-1, f * f)
        c = 1.0 / f ** 4
        # rank-one block inverse: (lam I + c 11^T)^-1 = (I - c 11^T/(lam + c f^2)) / lam
        sums = blocks.sum(axis=1, keepdims=True)
        solved = (blocks - c * sums / (lam + c * f * f)) / lam
        out = solved.reshape(h // f, w // f, f, f).transpose(0, 2, 1, 3).reshape(h, w)
        return out.ravel(), False

    def apply_spd(x: Array) -> Array:
        return adjoint(op, op.apply(x)) + lam * x

    b = adjoint(op, y_vec) + lam * x0_hat
    x, _ = cg_solve(apply_spd, b, x0_hat, iters=50, tol=1e-10)
    return x, True


def _run_image(model: ScoreModel, op: LinearOperator, y: Measurement,
               cfg: SolverConfig) -> Trajectory:
    schedule = model.schedule
    rng = np.random.default_rng(cfg.seed)
    x = rng.standard_normal(model.latent_shape)
    steps = timestep_sequence(schedule.T, cfg.nfe)
    records: list[StepRecord] = []
    cg_fallback = False
    for i, t in enumerate(steps):
        t_prev = steps[i + 1] if i + 1 < len(steps) else 0
        eps = model.predict(x, t, None)
        x0 = tweedie(schedule, x, t, eps)
        resid = float(np.linalg.norm(op.apply(x0) - y.y))
        if cfg.solver == "dps":
            r_hat, rn = _norm_dir(op.apply(x0) - y.y)
            g = np.zeros_like(x)
            if rn > 0.0:
                g = _tweedie_vjp(model, x, t, None, adjoint(op, r_hat))
            x_next = ddim_transition(schedule, x0, eps, t, cfg.eta, rng, t_prev)
            x = x_next - cfg.rho.at(schedule, t) * g
        elif cfg.solver == "dds":
            def apply_spd(w: Array) -> Array:
                return adjoint(op, op.apply(w)) + cfg.dds_gamma * w
            b = adjoint(op, y.y) + cfg.dds_gamma * x0
            x0_prox, _ = cg_solve(apply_spd, b, x0, iters=cfg.dds_cg_iters, tol=1e-14)
            x = ddim_transition(schedule, x0_prox, eps, t, cfg.eta, rng, t_prev)
        elif cfg.solver == "diffpir":
            ab = schedule.abar(t)
            lam = cfg.diffpir.lambda_dp * y.sigma_y ** 2 * ab / (1.0 - ab)
            x0_prox, used_cg = diffpir_data_solve(op, y.y, x0, lam)
            cg_fallback = cg_fallback or used_cg
            ab_p = schedule.abar(t_prev)
            zeta = cfg.diffpir.zeta
            mix = np.sqrt(1.0 - zeta) * eps
            if zeta > 0.0:
                mix = mix + np.sqrt(zeta) * rng.standard_normal(x.shape)
            x = np.sqrt(ab_p) * x0_prox + np.sqrt(1.0 - ab_p) * mix
        else:
            raise ParameterError(f"not an image-space solver: {cfg.solver!r}")
        if not np.all(np.isfinite(x)):
            raise SolverError(f"{cfg.solver}: non-finite state at step t={t}")
        records.append(StepRecord(t=t, residual=resid, prompt_loss=math.nan,
                                  projected=False, embedding_norm=0.0))
    return Trajectory(cfg.solver, records, final_x=x, final_z=None,
                      cg_fallback=cg_fallback)


def run_p2l(model: ScoreModel, codec: LatentCodec, op: LinearOperator,
            y: Measurement, cfg: SolverConfig) -> Trajectory:
    cfg.validate()
    if cfg.solver not in ("p2l", "p2l_adam"):
        raise ParameterError(f"run_p2l got solver {cfg.solver!r}")
    return _run_latent(model, codec, op, y, cfg)


def run_baseline(model: ScoreModel, codec: LatentCodec | None, op: LinearOperator,
                 y: Measurement, cfg: SolverConfig) -> Trajectory:
    cfg.validate()
    if cfg.solver in ("ldps", "gml_dps", "psld", "ldir"):
        if codec is None:
            raise ParameterError(f"{cfg.solver} needs a codec")
        return _run_latent(model, codec, op, y, cfg)
    if cfg.solver in IMAGE_SOLVERS:
        return _run_image(model, op, y, cfg)
    raise ParameterError(f"run_baseline got solver {cfg.solver!r}")


def run_solver(model: ScoreModel, codec: LatentCodec | None, op: LinearOperator,
               y: Measurement, cfg: SolverConfig) -> Trajectory:
    if cfg.solver in ("p2l", "p2l_adam"):
        if codec is None:
            raise ParameterError("p2l needs a codec")
        return run_p2l(model, codec, op, y, cfg)
    return run_baseline(model, codec, op, y, cfg)


# ---------------------------------------------------------------------------
# patched evaluation for latents larger than the model's native grid

def _window_starts(extent: int, patch: int, stride: int) -> list[int]:
    starts = list(range(0, extent - patch + 1, stride))
    if starts[-1] != extent - patch:
        starts.append(extent - patch)
    return starts


def patched_epsilon(model: ScoreModel, z_t: Array, t: int, C,
                    patch: int, stride: int, weighting: str = "uniform",
                    gauss_var: float = 0.01) -> Array:
    """Evaluate the model on strided patch windows of an oversized latent
    grid and blend the predictions with uniform or Gaussian weights.

    The last window along each axis is clamped to the grid edge so the
    tiling always covers every cell.
    """
    z_t = np.asarray(z_t, dtype=float)
    if z_t.ndim != 2:
        raise ParameterError("patched evaluation expects a 2-D latent grid")
    if model.latent_shape != (patch, patch):
        raise ParameterError(
            f"model native shape {model.latent_shape} != ({patch}, {patch})")
    hh, ww = z_t.shape
    if patch > min(hh, ww):
        raise ParameterError(f"patch {patch} exceeds grid {z_t.shape}")
    if stride > patch:
        raise CoverageError(f"stride {stride} > patch {patch} leaves gaps")
    if stride < 1:
        raise ParameterError("stride must be >= 1")
    if weighting == "uniform":
        w = np.ones((patch, patch))
    elif weighting == "gaussian":
        u = (np.arange(patch) - (patch - 1) / 2.0) / patch
        w1 = np.exp(-u ** 2 / (2.0 * gauss_var))
        w = np.outer(w1, w1)
    else:
        raise ParameterError(f"unknown weighting {weighting!r}")
    num = np.zeros_like(z_t)
    den = np.zeros_like(z_t)
    for r in _window_starts(hh, patch, stride):
        for c in _window_starts(ww, patch, stride):
            win = z_t[r:r + patch, c:c + patch]
            num[r:r + patch, c:c + patch] += w * model.predict(win, t, C)
            den[r:r + patch, c:c + patch] += w
    return num / den


def accumulated_weight_map(shape: tuple[int, int], patch: int, stride: int,
                           weighting: str = "uniform", gauss_var: float = 0.01) -> Array:
    """The denominator of :func:`patched_epsilon`, exposed for inspection."""
    if weighting == "uniform":
        w = np.ones((patch, patch))
    else:
        u = (np.arange(patch) - (patch - 1) / 2.0) / patch
        w1 = np.exp(-u ** 2 / (2.0 * gauss_var))
        w = np.outer(w1, w1)
    den = np.zeros(shape)
    for r in _window_starts(shape[0], patch, stride):
        for c in _window_starts(shape[1], patch, stride):
            den[r:r + patch, c:c + patch] += w
    return den


# ---------------------------------------------------------------------------
# config serialization

def config_to_dict(cfg: SolverConfig) -> dict[str, Any]:
    return {
        "solver": cfg.solver, "nfe": cfg.nfe, "eta": cfg.eta,
        "rho": {"kind": cfg.rho.kind, "value": cfg.rho.value},
        "gamma_proj": cfg.gamma_proj, "lambda_prox": cfg.lambda_prox,
        "prox_cg_iters": cfg.prox_cg_iters, "prox_cg_tol": cfg.prox_cg_tol,
        "prompt_iters": cfg.prompt_iters, "prompt_lr": cfg.prompt_lr,
        "grad_type": cfg.grad_type,
        "adam": {"beta1": cfg.adam.beta1, "beta2": cfg.adam.beta2,
                 "eps_stab": cfg.adam.eps_stab},
        "lambda_fix": cfg.lambda_fix, "dds_gamma": cfg.dds_gamma,
        "dds_cg_iters": cfg.dds_cg_iters,
        "diffpir": {"zeta": cfg.diffpir.zeta, "lambda_dp": cfg.diffpir.lambda_dp},
        "seed": cfg.seed, "gamma_variant": cfg.gamma_variant,
        "project_every_step": cfg.project_every_step,
        "renoise_unprojected": cfg.renoise_unprojected,
        "prompt_use_cond_mean": cfg.prompt_use_cond_mean,
        "prompt_rho_shift": cfg.prompt_rho_shift,
        "prompt_adam_persist": cfg.prompt_adam_persist,
    }


def config_from_dict(d: dict[str, Any]) -> SolverConfig:
    cfg = SolverConfig()
    plain = {f: type(getattr(cfg, f)) for f in (
        "solver", "nfe", "eta", "gamma_proj", "lambda_prox", "prox_cg_iters",
        "prox_cg_tol", "prompt_iters", "prompt_lr", "grad_type", "lambda_fix",
        "dds_gamma", "dds_cg_iters", "seed", "gamma_variant", "project_every_step",
        "renoise_unprojected", "prompt_use_cond_mean", "prompt_rho_shift",
        "prompt_adam_persist")}
    kwargs: dict[str, Any] = {}
    for key, typ in plain.items():
        if key in d:
            kwargs[key] = typ(d[key])
    if "rho" in d:
        kwargs["rho"] = RhoRule(kind=d["rho"].get("kind", "constant"),
                                value=float(d["rho"].get("value", 1.0)))
    if "adam" in d:
        kwargs["adam"] = AdamParams(**{k: float(vv) for k, vv in d["adam"].items()})
    if "diffpir" in d:
        kwargs["diffpir"] = DiffPirParams(**{k: float(vv) for k, vv in d["diffpir"].items()})
    cfg = replace(cfg, **kwargs)
    cfg.validate()
    return cfg
