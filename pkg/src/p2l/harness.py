"""Experiment driver: config parsing, dataset synthesis, the closed-form
posterior oracle, metrics, and CSV/image reporting.

Ground truths are drawn from the score model's prior, so for linear
codecs and Gaussian priors the exact posterior is available and every
solver can be scored against it.  The whole experiment output is a pure
function of the config.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from dataclasses import replace as dc_replace
from pathlib import Path
from typing import Any

import numpy as np

from . import pnm
from .codec import LatentCodec, make_codec
from .diffmap import Array, materialize_linear
from .errors import NumericError, DimensionError, ParameterError
from .operators import (LinearOperator, Measurement, OperatorSpec, add_noise,
                        adjoint, make_operator, spec_from_dict, spec_to_dict)
from .score import (ConditionalGMMModel, GaussianAnalyticModel, NoiseSchedule,
                    ScoreModel, make_vp_schedule)
from .solvers import (RhoRule, SolverConfig, Trajectory, config_from_dict,
                      config_to_dict, run_solver)

OUTPUT_DIR_ENV = "P2L_OUTPUT_DIR"

SUMMARY_NOTE = ("# metrics: MSE / PSNR against the prior-sampled ground truth, "
                "plus distance to the closed-form posterior mean when the setup "
                "is linear-Gaussian; no learned perceptual metrics")

SUMMARY_COLUMNS = ["solver", "n_ok", "psnr_mean", "psnr_std", "mse_mean", "mse_std",
                   "residual_mean", "residual_std", "oracle_rel_mean", "oracle_rel_std"]


@dataclass
class DatasetSpec:
    n_instances: int = 1
    image_shape: tuple[int, int] = (16, 16)
    seed: int = 0


@dataclass
class ExperimentConfig:
    operator: OperatorSpec
    codec: dict[str, Any]
    model: dict[str, Any]
    solvers: list[SolverConfig]
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    sigma_y: float = 0.01
    output_dir: str = "out"
    schedule: dict[str, Any] = field(default_factory=dict)
    image_model: dict[str, Any] | None = None
    emit_images: bool = False

    def validate(self) -> None:
        if self.dataset.n_instances < 1:
            raise ParameterError("n_instances must be >= 1")
        if self.sigma_y < 0:
            raise ParameterError("sigma_y must be >= 0")
        for cfg in self.solvers:
            cfg.validate()


@dataclass(frozen=True)
class OracleResult:
    posterior_mean: Array
    posterior_cov_diag: Array
    log_evidence: float


def gaussian_posterior_oracle(prior_mean: Array, prior_var: Array | float,
                              codec: LatentCodec, op: LinearOperator,
                              y: Measurement) -> OracleResult:
    """Closed-form Gaussian posterior for x = D z, z ~ N(mu, Sigma),
    y = A x + sigma * g; returns the image-space mean D(mean_z)."""
    if not codec.is_linear:
        raise ParameterError("oracle needs a linear codec")
    if y.sigma_y <= 0:
        raise ParameterError("oracle needs sigma_y > 0")
    k = codec.k
    mu = np.broadcast_to(np.asarray(prior_mean, dtype=float), (k,))
    var = np.broadcast_to(np.asarray(prior_var, dtype=float), (k,))
    if np.any(var <= 0):
        raise NumericError("singular prior covariance")
    d_mat = materialize_linear(codec.decoder)
    a_mat = materialize_linear(op.map)
    m_mat = a_mat @ d_mat  # (m, k)
    s2 = y.sigma_y ** 2
    prec = np.diag(1.0 / var) + (m_mat.T @ m_mat) / s2
    cov_z = np.linalg.inv(prec)
    mean_z = cov_z @ (mu / var + (m_mat.T @ y.y) / s2)
    cov_x_diag = np.einsum("ij,jk,ik->i", d_mat, cov_z, d_mat)
    # log N(y; M mu, s2 I + M Sigma M^T)
    s_mat = s2 * np.eye(m_mat.shape[0]) + (m_mat * var) @ m_mat.T
    sign, logdet = np.linalg.slogdet(s_mat)
    if sign <= 0:
        raise NumericError("singular evidence covariance")
    resid = y.y - m_mat @ mu
    mdim = m_mat.shape[0]
    log_ev = -0.5 * (mdim * np.log(2 * np.pi) + logdet
                     + resid @ np.linalg.solve(s_mat, resid))
    return OracleResult(posterior_mean=d_mat @ mean_z,
                        posterior_cov_diag=cov_x_diag,
                        log_evidence=float(log_ev))


def psnr(x: Array, x_ref: Array, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE), capped at 99 dB for identical inputs."""
    x = np.asarray(x, dtype=float)
    x_ref = np.asarray(x_ref, dtype=float)
    if x.shape != x_ref.shape:
        raise DimensionError(f"shape mismatch {x.shape} vs {x_ref.shape}")
    if peak <= 0:
        raise ParameterError("peak must be positive")
    mse = float(np.mean((x - x_ref) ** 2))
    if mse == 0.0:
        return 99.0
    return min(99.0, 10.0 * math.log10(peak ** 2 / mse))


def build_schedule(d: dict[str, Any]) -> NoiseSchedule:
    return make_vp_schedule(int(d.get("T", 1000)), float(d.get("beta_min", 1e-4)),
                            float(d.get("beta_max", 2e-2)))


def build_model(d: dict[str, Any], schedule: NoiseSchedule) -> ScoreModel:
    kind = d.get("kind", "gaussian_analytic")
    if kind == "gaussian_analytic":
        dim = int(d["dim"])
        mean = np.asarray(d.get("mean", np.zeros(dim)), dtype=float)
        if mean.ndim == 0:
            mean = np.full(dim, float(mean))
        return GaussianAnalyticModel(schedule, mean, var=float(d.get("var", 1.0)),
                                     embedding_dim=int(d.get("embedding_dim", 8)))
    if kind == "gmm_conditional":
        return ConditionalGMMModel(
            schedule,
            means=np.asarray(d["means"], dtype=float),
            variances=(np.asarray(d["variances"], dtype=float)
                       if "variances" in d else None),
            weights=(np.asarray(d["weights"], dtype=float)
                     if "weights" in d else None),
            tags=np.asarray(d["tags"], dtype=float) if "tags" in d else None,
            embedding_dim=int(d.get("embedding_dim", 8)),
            tag_seed=int(d.get("tag_seed", 0)))
    raise ParameterError(f"unknown model kind {kind!r}")


def build_codec(d: dict[str, Any]) -> LatentCodec:
    return make_codec(d.get("kind", "linear_orthogonal"), int(d["n"]), int(d["k"]),
                      imperfection=float(d.get("imperfection", 0.0)),
                      seed=int(d.get("seed", 0)),
                      hidden=int(d["hidden"]) if "hidden" in d else None)


def config_from_json(d: dict[str, Any]) -> ExperimentConfig:
    ds = d.get("dataset", {})
    cfg = ExperimentConfig(
        operator=spec_from_dict(d["operator"]),
        codec=d["codec"],
        model=d["model"],
        solvers=[config_from_dict(s) for s in d["solvers"]],
        dataset=DatasetSpec(n_instances=int(ds.get("n_instances", 1)),
                            image_shape=tuple(ds.get("image_shape", (16, 16))),
                            seed=int(ds.get("seed", 0))),
        sigma_y=float(d.get("sigma_y", 0.01)),
        output_dir=str(d.get("output_dir", "out")),
        schedule=d.get("schedule", {}),
        image_model=d.get("image_model"),
        emit_images=bool(d.get("emit_images", False)),
    )
    cfg.validate()
    return cfg


def config_to_json(cfg: ExperimentConfig) -> dict[str, Any]:
    return {
        "operator": spec_to_dict(cfg.operator),
        "codec": cfg.codec,
        "model": cfg.model,
        "solvers": [config_to_dict(s) for s in cfg.solvers],
        "dataset": {"n_instances": cfg.dataset.n_instances,
                    "image_shape": list(cfg.dataset.image_shape),
                    "seed": cfg.dataset.seed},
        "sigma_y": cfg.sigma_y,
        "output_dir": cfg.output_dir,
        "schedule": cfg.schedule,
        "image_model": cfg.image_model,
        "emit_images": cfg.emit_images,
    }


def load_config(path: str | Path) -> ExperimentConfig:
    with open(path) as fh:
        return config_from_json(json.load(fh))


@dataclass
class InstanceResult:
    solver: str
    index: int
    ok: bool
    psnr: float = math.nan
    mse: float = math.nan
    residual: float = math.nan
    oracle_rel: float = math.nan
    error: str = ""


@dataclass
class ExperimentReport:
    out_dir: Path
    results: list[InstanceResult]
    summary_path: Path

    @property
    def all_failed(self) -> bool:
        return all(not r.ok for r in self.results)


def _fmt(x: float) -> str:
    return format(x, ".17g")


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """Synthesize instances, run every configured solver, write reports.

    Per-instance trajectory CSVs and a summary CSV (one row per solver,
    mean and std over instances) land in the output directory, which the
    P2L_OUTPUT_DIR environment variable overrides.
    """
    cfg.validate()
    out_dir = Path(os.environ.get(OUTPUT_DIR_ENV, cfg.output_dir))
    out_dir.mkdir(parents=True, exist_ok=True)
    schedule = build_schedule(cfg.schedule)
    model = build_model(cfg.model, schedule)
    codec = build_codec(cfg.codec)
    op = make_operator(cfg.operator)
    image_model = (build_model(cfg.image_model, schedule)
                   if cfg.image_model is not None else None)
    is_lin_gauss = codec.is_linear and model.kind == "gaussian_analytic" and cfg.sigma_y > 0

    results: list[InstanceResult] = []
    for idx in range(cfg.dataset.n_instances):
        rng = np.random.default_rng([cfg.dataset.seed, idx])
        z_true = model.sample_prior(rng)
        x_true = codec.decode(z_true)
        y_clean = op.apply(x_true)
        y = add_noise(y_clean, cfg.sigma_y, seed=int(rng.integers(2 ** 31)),
                      operator_id=op.operator_id)
        oracle = None
        if is_lin_gauss:
            oracle = gaussian_posterior_oracle(model.mean, model.var, codec, op, y)
        for scfg in cfg.solvers:
            inst_seed = int(np.random.default_rng(
                [cfg.dataset.seed, idx, scfg.seed]).integers(2 ** 31))
            inst_cfg = dc_replace(scfg, seed=inst_seed)
            try:
                if scfg.solver in ("dps", "dds", "diffpir"):
                    if image_model is None:
                        raise ParameterError(
                            f"{scfg.solver} needs an image_model in the config")
                    traj = run_solver(image_model, None, op, y, inst_cfg)
                else:
                    traj = run_solver(model, codec, op, y, inst_cfg)
                x_hat = traj.final_x
                res = InstanceResult(
                    solver=scfg.solver, index=idx, ok=True,
                    psnr=psnr(x_hat, x_true),
                    mse=float(np.mean((x_hat - x_true) ** 2)),
                    residual=float(np.linalg.norm(op.apply(x_hat) - y.y)))
                if oracle is not None:
                    res.oracle_rel = float(np.linalg.norm(x_hat - oracle.posterior_mean)
                                           / np.linalg.norm(oracle.posterior_mean))
                traj.to_csv(out_dir / f"traj_{scfg.solver}_{idx:03d}.csv")
                if cfg.emit_images:
                    emit_images(traj, out_dir, prefix=f"{scfg.solver}_{idx:03d}",
                                op=op, measurement=y, truth=x_true,
                                image_shape=cfg.dataset.image_shape)
            except Exception as exc:  # per-instance failure, run continues
                res = InstanceResult(solver=scfg.solver, index=idx, ok=False,
                                     error=f"{type(exc).__name__}: {exc}")
            results.append(res)

    summary_path = out_dir / "summary.csv"
    with open(summary_path, "w", newline="") as fh:
        fh.write(SUMMARY_NOTE + "\n")
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        for scfg in cfg.solvers:
            rows = [r for r in results if r.solver == scfg.solver and r.ok]
            vals: list[str] = [scfg.solver, str(len(rows))]
            for attr in ("psnr", "mse", "residual", "oracle_rel"):
                xs = np.array([getattr(r, attr) for r in rows])
                xs = xs[np.isfinite(xs)]
                if xs.size:
                    vals += [_fmt(float(xs.mean())),
                             _fmt(float(xs.std(ddof=0)))]
                else:
                    vals += ["", ""]
            writer.writerow(vals)
    return ExperimentReport(out_dir=out_dir, results=results, summary_path=summary_path)


def emit_images(trajectory: Trajectory, out_dir: str | Path, prefix: str,
                op: LinearOperator | None = None,
                measurement: Measurement | None = None,
                truth: Array | None = None,
                image_shape: tuple[int, int] | None = None) -> list[Path]:
    """Write the final restoration plus optional measurement (adjoint-lifted
    for display) and ground truth as 16-bit PGM files."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if image_shape is None:
        n = trajectory.final_x.size
        side = int(round(math.sqrt(n)))
        if side * side != n:
            raise ParameterError("image_shape needed for non-square images")
        image_shape = (side, side)
    written = []
    path = out_dir / f"{prefix}_final.pgm"
    pnm.write_pgm16(path, trajectory.final_x.reshape(image_shape))
    written.append(path)
    if measurement is not None and op is not None:
        lifted = adjoint(op, measurement.y).reshape(image_shape)
        path = out_dir / f"{prefix}_measurement.pgm"
        pnm.write_pgm16(path, lifted)
        written.append(path)
    if truth is not None:
        path = out_dir / f"{prefix}_truth.pgm"
        pnm.write_pgm16(path, np.asarray(truth, dtype=float).reshape(image_shape))
        written.append(path)
    return written


def default_posterior_config(n_instances: int = 20, output_dir: str = "out") -> ExperimentConfig:
    """The default linear-Gaussian suite: random inpainting at p = 0.5 on a
    16x16 image with an orthogonal codec, solved by P2L and LDPS."""
    return ExperimentConfig(
        operator=OperatorSpec(kind="inpaint_random", image_shape=(16, 16),
                              drop_prob=0.5, seed=7),
        codec={"kind": "linear_orthogonal", "n": 256, "k": 64, "seed": 11},
        model={"kind": "gaussian_analytic", "dim": 64, "var": 1.0},
        solvers=[
            SolverConfig(solver="p2l", nfe=200, rho=RhoRule("constant", 0.5),
                         gamma_proj=3, lambda_prox=0.1, prompt_iters=0),
            SolverConfig(solver="ldps", nfe=200, rho=RhoRule("constant", 0.5)),
        ],
        dataset=DatasetSpec(n_instances=n_instances, image_shape=(16, 16), seed=123),
        sigma_y=0.01,
        output_dir=output_dir,
    )
