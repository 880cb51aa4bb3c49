import argparse
import json
import sys

import numpy as np

from . import pnm
from .checks import run_all_checks
from .harness import load_config, run_experiment
from .operators import make_operator, spec_from_dict


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="p2l",
        description="Latent-diffusion inverse problem solvers at desk scale")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a full experiment from a JSON config")
    p_run.add_argument("config", help="path to the experiment config")

    sub.add_parser("check", help="run the property suites (adjoints, gradients, "
                                 "CG oracle, fixed-point analysis)")

    p_kernel = sub.add_parser("kernel", help="emit an operator kernel or mask image")
    p_kernel.add_argument("spec", help="operator spec as inline JSON")
    p_kernel.add_argument("-o", "--output", default="kernel.pfm",
                          help="output PFM path (default kernel.pfm)")

    args = parser.parse_args(argv)

    if args.command == "run":
        report = run_experiment(load_config(args.config))
        n_ok = sum(r.ok for r in report.results)
        print(f"{n_ok}/{len(report.results)} solver runs succeeded")
        for r in report.results:
            if not r.ok:
                print(f"  failed: {r.solver} instance {r.index}: {r.error}")
        print(f"summary: {report.summary_path}")
        return 1 if report.all_failed else 0

    if args.command == "check":
        return 0 if run_all_checks() else 1

    if args.command == "kernel":
        op = make_operator(spec_from_dict(json.loads(args.spec)))
        if op.kernel is not None:
            img = op.kernel
        elif op.mask is not None:
            img = op.mask.astype(float)
        else:
            print(f"operator kind {op.kind!r} has no kernel or mask", file=sys.stderr)
            return 1
        pnm.write_pfm(args.output, np.asarray(img))
        print(f"wrote {args.output} ({img.shape[0]}x{img.shape[1]})")
        return 0

    return 2


if __name__ == "__main__":
    sys.exit(main())
