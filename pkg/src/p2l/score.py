"""Noise schedules, epsilon-prediction models, and Tweedie denoising.

The forward noising process is variance preserving: at step t the noisy
latent is ``z_t = sqrt(abar_t) z_0 + sqrt(1 - abar_t) eps`` with
``abar_t`` the running product of ``1 - beta_t``.  Score models here are
analytic (Gaussian or conditional Gaussian-mixture priors with exact
posterior scores) or a tiny trained MLP, and every model exposes
hand-written vjps with respect to both the latent and the conditioning
vector so samplers can chain gradients through them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .diffmap import Array
from .errors import ParameterError, TrainingError


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance-preserving schedule; index t runs 1..T, abar(0) is defined as 1."""

    T: int
    beta: Array
    alpha: Array
    alpha_bar: Array

    def abar(self, t: int) -> float:
        if t == 0:
            return 1.0
        self.check_t(t)
        return float(self.alpha_bar[t - 1])

    def check_t(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ParameterError(f"step index {t} outside 1..{self.T}")


def make_vp_schedule(T: int, beta_min: float = 1e-4, beta_max: float = 2e-2) -> NoiseSchedule:
    if T < 1:
        raise ParameterError("T must be >= 1")
    if not 0.0 < beta_min <= beta_max < 1.0:
        raise ParameterError(f"need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]")
    beta = np.linspace(beta_min, beta_max, T)
    alpha = 1.0 - beta
    return NoiseSchedule(T=T, beta=beta, alpha=alpha, alpha_bar=np.cumprod(alpha))


@dataclass(frozen=True)
class Embedding:
    """Tunable conditioning vector; the all-zeros vector is the null condition."""

    c: Array
    origin: str = "fixed"  # null | tuned | fixed


def null_embedding(dim: int) -> Embedding:
    return Embedding(c=np.zeros(dim), origin="null")


def _cvec(C: Embedding | Array | None, dim: int) -> Array:
    if C is None:
        return np.zeros(dim)
    c = C.c if isinstance(C, Embedding) else np.asarray(C, dtype=float)
    if c.shape != (dim,):
        raise ParameterError(f"embedding has shape {c.shape}, model expects ({dim},)")
    return c


class ScoreModel:
    """Interface shared by all epsilon predictors.

    ``predict(z, t, C)`` returns the expected noise given the noisy latent;
    ``vjp_z`` / ``vjp_c`` return the transpose-Jacobian action of the
    prediction with respect to the latent and the conditioning vector.
    """

    kind: str
    latent_shape: tuple[int, ...]
    embedding_dim: int
    schedule: NoiseSchedule

    def predict(self, z: Array, t: int, C: Embedding | Array | None = None) -> Array:
        raise NotImplementedError

    def vjp_z(self, z: Array, t: int, C: Embedding | Array | None, u: Array) -> Array:
        raise NotImplementedError

    def vjp_c(self, z: Array, t: int, C: Embedding | Array | None, u: Array) -> Array:
        raise NotImplementedError

    def sample_prior(self, rng: np.random.Generator, C: Embedding | Array | None = None) -> Array:
        raise NotImplementedError

    def _check(self, z: Array, t: int) -> Array:
        self.schedule.check_t(t)
        z = np.asarray(z, dtype=float)
        if z.shape != self.latent_shape:
            raise ParameterError(f"latent shape {z.shape} != model shape {self.latent_shape}")
        return z


class GaussianAnalyticModel(ScoreModel):
    """Exact epsilon predictor for the prior N(mean, var * I).

    The time marginal is N(sqrt(abar) mean, abar var + 1 - abar), so the
    score and hence the optimal epsilon are closed form:
    ``eps = sqrt(1 - abar) (z - sqrt(abar) mean) / (abar var + 1 - abar)``.
    """

    kind = "gaussian_analytic"

    def __init__(self, schedule: NoiseSchedule, mean: Array,
                 var: float = 1.0, embedding_dim: int = 8):
        if var <= 0:
            raise ParameterError("prior variance must be positive")
        self.schedule = schedule
        self.mean = np.asarray(mean, dtype=float)
        self.latent_shape = self.mean.shape
        self.var = float(var)
        self.embedding_dim = int(embedding_dim)

    def _coeffs(self, t: int) -> tuple[float, float]:
        ab = self.schedule.abar(t)
        return ab, ab * self.var + (1.0 - ab)

    def predict(self, z, t, C=None):
        z = self._check(z, t)
        ab, v = self._coeffs(t)
        return np.sqrt(1.0 - ab) * (z - np.sqrt(ab) * self.mean) / v

    def vjp_z(self, z, t, C, u):
        self._check(z, t)
        ab, v = self._coeffs(t)
        return np.sqrt(1.0 - ab) / v * np.asarray(u, dtype=float)

    def vjp_c(self, z, t, C, u):
        return np.zeros(self.embedding_dim)

    def sample_prior(self, rng, C=None):
        return self.mean + np.sqrt(self.var) * rng.standard_normal(self.latent_shape)


class ConditionalGMMModel(ScoreModel):
    """Exact epsilon predictor for a Gaussian mixture whose weights are
    steered by the conditioning vector.

    Component i has mean ``mu_i``, covariance ``var_i * I``, a base weight,
    and a unit tag vector; the conditioned weights are
    ``softmax(log pi_i + <C, tag_i>)``, so the null (zero) embedding leaves
    the base weights untouched.  Scores, their z-Jacobians (mixture
    Hessian), and their C-Jacobians (responsibility shifts) are all closed
    form and evaluated in log space.
    """

    kind = "gmm_conditional"

    def __init__(self, schedule: NoiseSchedule, means: Array, variances: Array | None = None,
                 weights: Array | None = None, tags: Array | None = None,
                 embedding_dim: int = 8, tag_seed: int = 0):
        means = np.atleast_2d(np.asarray(means, dtype=float))
        K, dim = means.shape
        self.schedule = schedule
        self.means = means
        self.latent_shape = (dim,)
        self.variances = (np.ones(K) if variances is None
                          else np.asarray(variances, dtype=float))
        if np.any(self.variances <= 0):
            raise ParameterError("component variances must be positive")
        w = np.ones(K) / K if weights is None else np.asarray(weights, dtype=float)
        if np.any(w <= 0):
            raise ParameterError("base weights must be positive")
        self.log_pi = np.log(w / w.sum())
        self.embedding_dim = int(embedding_dim)
        if tags is None:
            tags = np.random.default_rng(tag_seed).standard_normal((K, self.embedding_dim))
        tags = np.asarray(tags, dtype=float)
        self.tags = tags / np.linalg.norm(tags, axis=1, keepdims=True)

    # -- mixture bookkeeping ------------------------------------------------

    def mixture_weights(self, C: Embedding | Array | None = None) -> Array:
        c = _cvec(C, self.embedding_dim)
        logits = self.log_pi + self.tags @ c
        return np.exp(logits - logsumexp(logits))

    def _marginal(self, t: int) -> tuple[Array, Array]:
        ab = self.schedule.abar(t)
        return np.sqrt(ab) * self.means, ab * self.variances + (1.0 - ab)

    def _log_terms(self, z: Array, t: int, C) -> tuple[Array, Array, Array]:
        """Per-component log joint, natural gradient, and marginal variance."""
        c = _cvec(C, self.embedding_dim)
        m_t, v_t = self._marginal(t)
        diff = z[None, :] - m_t
        dim = z.size
        log_n = -0.5 * (np.sum(diff ** 2, axis=1) / v_t + dim * np.log(2 * np.pi * v_t))
        log_joint = self.log_pi + self.tags @ c + log_n
        grads = -diff / v_t[:, None]
        return log_joint, grads, v_t

    def responsibilities(self, z: Array, t: int, C: Embedding | Array | None = None) -> Array:
        z = self._check(np.asarray(z, dtype=float).ravel(), t)
        log_joint, _, _ = self._log_terms(z, t, C)
        return np.exp(log_joint - logsumexp(log_joint))

    def log_marginal(self, z: Array, t: int, C: Embedding | Array | None = None) -> float:
        z = np.asarray(z, dtype=float).ravel()
        log_joint, _, _ = self._log_terms(z, t, C)
        return float(logsumexp(log_joint))

    # -- epsilon interface --------------------------------------------------

    def predict(self, z, t, C=None):
        z = self._check(z, t)
        ab = self.schedule.abar(t)
        log_joint, grads, _ = self._log_terms(z, t, C)
        gamma = np.exp(log_joint - logsumexp(log_joint))
        score = gamma @ grads
        return -np.sqrt(1.0 - ab) * score

    def vjp_z(self, z, t, C, u):
        z = self._check(z, t)
        u = np.asarray(u, dtype=float)
        ab = self.schedule.abar(t)
        log_joint, grads, v_t = self._log_terms(z, t, C)
        gamma = np.exp(log_joint - logsumexp(log_joint))
        gbar = gamma @ grads
        # Hessian of the log marginal: sum_i gamma_i g_i g_i^T - gbar gbar^T
        # - (sum_i gamma_i / v_i) I, symmetric, applied matrix-free.
        hu = (grads.T @ (gamma * (grads @ u))
              - gbar * float(gbar @ u)
              - float(np.sum(gamma / v_t)) * u)
        return -np.sqrt(1.0 - ab) * hu

    def vjp_c(self, z, t, C, u):
        z = self._check(z, t)
        u = np.asarray(u, dtype=float)
        ab = self.schedule.abar(t)
        log_joint, grads, _ = self._log_terms(z, t, C)
        gamma = np.exp(log_joint - logsumexp(log_joint))
        tbar = gamma @ self.tags
        coef = gamma * (grads @ u)
        return -np.sqrt(1.0 - ab) * (coef @ (self.tags - tbar[None, :]))

    def sample_prior(self, rng, C=None):
        w = self.mixture_weights(C)
        i = int(rng.choice(len(w), p=w))
        return self.means[i] + np.sqrt(self.variances[i]) * rng.standard_normal(self.latent_shape)


class ToyDenoiser(ScoreModel):
    """One-hidden-layer tanh MLP epsilon predictor over [z, t/T, C]."""

    kind = "learned_toy"

    def __init__(self, schedule: NoiseSchedule, latent_shape: tuple[int, ...],
                 embedding_dim: int, hidden: int, seed: int = 0):
        self.schedule = schedule
        self.latent_shape = tuple(latent_shape)
        self.embedding_dim = int(embedding_dim)
        self.hidden = int(hidden)
        dim = int(np.prod(latent_shape))
        din = dim + 1 + self.embedding_dim
        rng = np.random.default_rng(seed)
        self.w1 = rng.standard_normal((hidden, din)) / np.sqrt(din)
        self.b1 = np.zeros(hidden)
        self.w2 = rng.standard_normal((dim, hidden)) / np.sqrt(hidden)
        self.b2 = np.zeros(dim)
        self.training_loss: list[float] = []

    def _features(self, z: Array, t: int, C) -> Array:
        c = _cvec(C, self.embedding_dim)
        return np.concatenate([z.ravel(), [t / self.schedule.T], c])

    def _forward_parts(self, f: Array) -> tuple[Array, Array]:
        h = np.tanh(self.w1 @ f + self.b1)
        return h, self.w2 @ h + self.b2

    def predict(self, z, t, C=None):
        z = self._check(z, t)
        _, out = self._forward_parts(self._features(z, t, C))
        return out.reshape(self.latent_shape)

    def _vjp_features(self, z: Array, t: int, C, u: Array) -> Array:
        f = self._features(z, t, C)
        h, _ = self._forward_parts(f)
        return self.w1.T @ ((1.0 - h ** 2) * (self.w2.T @ np.asarray(u, dtype=float).ravel()))

    def vjp_z(self, z, t, C, u):
        z = self._check(z, t)
        dim = int(np.prod(self.latent_shape))
        return self._vjp_features(z, t, C, u)[:dim].reshape(self.latent_shape)

    def vjp_c(self, z, t, C, u):
        z = self._check(z, t)
        dim = int(np.prod(self.latent_shape))
        return self._vjp_features(z, t, C, u)[dim + 1:]

    def sample_prior(self, rng, C=None):
        raise ParameterError("learned_toy has no analytic prior to sample")


def epsilon_predict(model: ScoreModel, z_t: Array, t: int,
                    C: Embedding | Array | None = None) -> Array:
    return model.predict(z_t, t, C)


def tweedie(schedule: NoiseSchedule, z_t: Array, t: int, epsilon_hat: Array) -> Array:
    """Posterior-mean denoising: ``z0 = (z_t - sqrt(1 - abar) eps) / sqrt(abar)``."""
    schedule.check_t(t)
    ab = schedule.abar(t)
    z_t = np.asarray(z_t, dtype=float)
    epsilon_hat = np.asarray(epsilon_hat, dtype=float)
    if z_t.shape != epsilon_hat.shape:
        raise ParameterError(f"shape mismatch {z_t.shape} vs {epsilon_hat.shape}")
    return (z_t - np.sqrt(1.0 - ab) * epsilon_hat) / np.sqrt(ab)


def train_toy_denoiser(dataset: Array, schedule: NoiseSchedule, hidden: int = 48,
                       embedding_dim: int = 4, epochs: int = 200, lr: float = 0.05,
                       batch: int = 32, seed: int = 0) -> ToyDenoiser:
    """Fit the toy MLP by seeded SGD on the epsilon-matching loss.

    Each minibatch draws clean latents from the dataset, a step t, and a
    noise sample, then regresses the network output onto that noise.  The
    per-epoch mean loss is recorded on the returned model.
    """
    dataset = np.atleast_2d(np.asarray(dataset, dtype=float))
    if dataset.size == 0:
        raise ParameterError("dataset must be nonempty")
    if epochs < 0:
        raise ParameterError("epochs must be >= 0")
    nsamp, dim = dataset.shape
    model = ToyDenoiser(schedule, (dim,), embedding_dim, hidden, seed=seed)
    rng = np.random.default_rng(seed + 1)
    czero = np.zeros(embedding_dim)
    for epoch in range(epochs):
        epoch_loss = 0.0
        for _ in range(max(1, nsamp // batch)):
            z0 = dataset[rng.integers(0, nsamp, size=batch)]
            tt = rng.integers(1, schedule.T + 1, size=batch)
            eps = rng.standard_normal((batch, dim))
            ab = np.array([schedule.abar(int(t)) for t in tt])
            zt = np.sqrt(ab)[:, None] * z0 + np.sqrt(1.0 - ab)[:, None] * eps
            feats = np.concatenate([zt, (tt / schedule.T)[:, None],
                                    np.tile(czero, (batch, 1))], axis=1)
            pre = feats @ model.w1.T + model.b1
            h = np.tanh(pre)
            out = h @ model.w2.T + model.b2
            resid = out - eps
            loss = float(np.mean(np.sum(resid ** 2, axis=1)))
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            epoch_loss += loss
            gout = 2.0 * resid / batch
            gw2 = gout.T @ h
            gb2 = gout.sum(axis=0)
            gh = (gout @ model.w2) * (1.0 - h ** 2)
            gw1 = gh.T @ feats
            gb1 = gh.sum(axis=0)
            model.w1 -= lr * gw1
            model.b1 -= lr * gb1
            model.w2 -= lr * gw2
            model.b2 -= lr * gb2
        model.training_loss.append(epoch_loss / max(1, nsamp // batch))
    return model


def export_model_weights(model: ToyDenoiser, path: str | Path) -> None:
    blob = b"".join(np.ascontiguousarray(w, dtype="<f8").tobytes()
                    for w in (model.w1, model.b1, model.w2, model.b2))
    Path(path).write_bytes(blob)
