"""Self-contained property suites behind the `check` CLI subcommand:
adjoint dot tests for every operator kind, finite-difference gradient
certification for codecs and score models, the CG-vs-dense oracle, and
the decode-encode fixed-point analysis."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codec import autoencode_iterate, make_codec
from .diffmap import check_vjp, DiffMap
from .operators import OperatorSpec, dot_product_check, make_operator
from .proximal import cg_solve
from .score import make_vp_schedule, GaussianAnalyticModel, ConditionalGMMModel


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _operator_suite() -> list[CheckResult]:
    out = []
    specs = [
        OperatorSpec("identity", (8, 8)),
        OperatorSpec("sr_avgpool", (8, 8), factor=2),
        OperatorSpec("gaussian_blur", (8, 8), kernel_size=5, kernel_sigma=1.0),
        OperatorSpec("motion_blur", (8, 8), kernel_size=5, motion_intensity=0.5, seed=3),
        OperatorSpec("inpaint_random", (8, 8), drop_prob=0.5, seed=3),
        OperatorSpec("inpaint_freeform", (8, 8), seed=3),
    ]
    for spec in specs:
        err = dot_product_check(make_operator(spec), trials=100, seed=0)
        out.append(CheckResult(f"dot_test[{spec.kind}]", err <= 1e-8,
                               f"max_rel_err={err:.3e}"))
    return out


def _gradient_suite() -> list[CheckResult]:
    out = []
    rng = np.random.default_rng(0)
    lin = make_codec("linear_orthogonal", 32, 8, seed=1)
    mlp = make_codec("mlp_tanh", 32, 8, seed=1)
    for label, cdc, tol in (("linear", lin, 1e-6), ("mlp_tanh", mlp, 1e-4)):
        for side in ("encoder", "decoder"):
            m: DiffMap = getattr(cdc, side)
            x = rng.standard_normal(m.input_shape)
            rep = check_vjp(m, x, trials=10, step=1e-5, tol=tol, seed=2)
            out.append(CheckResult(f"vjp[{label}.{side}]", rep.passed,
                                   f"max_rel_err={rep.max_rel_err:.3e}"))
    sched = make_vp_schedule(100)
    gauss = GaussianAnalyticModel(sched, np.zeros(8))
    gmm = ConditionalGMMModel(sched, means=rng.standard_normal((3, 8)),
                              embedding_dim=4, tag_seed=5)
    for label, model in (("gaussian", gauss), ("gmm", gmm)):
        z = rng.standard_normal(8)
        c = 0.3 * rng.standard_normal(model.embedding_dim)
        eps_z = DiffMap((8,), (8,), lambda zz: model.predict(zz, 50, c),
                        lambda zz, u: model.vjp_z(zz, 50, c, u))
        rep = check_vjp(eps_z, z, trials=10, step=1e-5, tol=1e-6, seed=3)
        out.append(CheckResult(f"vjp[{label}.z]", rep.passed,
                               f"max_rel_err={rep.max_rel_err:.3e}"))
        dmc = model.embedding_dim
        eps_c = DiffMap((dmc,), (8,), lambda cc: model.predict(z, 50, cc),
                        lambda cc, u: model.vjp_c(z, 50, cc, u))
        rep = check_vjp(eps_c, c, trials=10, step=1e-5, tol=1e-6, seed=4)
        out.append(CheckResult(f"vjp[{label}.C]", rep.passed,
                               f"max_rel_err={rep.max_rel_err:.3e}"))
    return out


def _cg_suite() -> list[CheckResult]:
    rng = np.random.default_rng(1)
    r = rng.standard_normal((16, 16))
    m = r.T @ r + np.eye(16)
    b = rng.standard_normal(16)
    x, _ = cg_solve(lambda v: m @ v, b, np.zeros(16), iters=16, tol=1e-12)
    ref = np.linalg.solve(m, b)
    err = float(np.linalg.norm(x - ref) / np.linalg.norm(ref))
    return [CheckResult("cg_vs_dense", err <= 1e-8, f"rel_err={err:.3e}")]


def _fixed_point_suite() -> list[CheckResult]:
    out = []
    perfect = make_codec("linear_orthogonal", 256, 64, seed=2)
    rng = np.random.default_rng(3)
    tail_zero = True
    for _ in range(8):
        d = autoencode_iterate(perfect, rng.standard_normal(256), 10)
        tail_zero &= bool(np.all(d[1:] <= 1e-10))
    out.append(CheckResult("fixed_point[orthogonal]", tail_zero,
                           "displacement is 0 after the first projection"))
    drift = make_codec("linear_perturbed", 256, 64, imperfection=0.05, seed=2)
    dists = np.mean([autoencode_iterate(drift, rng.standard_normal(256), 25)
                     for _ in range(32)], axis=0)
    tail = dists[-12:]
    grows = bool(np.all(np.diff(tail) >= -1e-12))
    out.append(CheckResult("fixed_point[perturbed]", grows,
                           f"tail mean displacement {tail[0]:.3g} -> {tail[-1]:.3g}"))
    return out


def run_all_checks(verbose: bool = True) -> bool:
    results = (_operator_suite() + _gradient_suite() + _cg_suite()
               + _fixed_point_suite())
    ok = True
    for r in results:
        ok &= r.passed
        if verbose:
            print(f"[{'PASS' if r.passed else 'FAIL'}] {r.name}: {r.detail}")
    return ok
