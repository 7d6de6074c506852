"""Command line entry point: ``multicontinuum run`` and ``multicontinuum sweep``."""
import argparse
import logging
import sys

from .experiments import (
    EPS_CHOICES, ConfigError, ExperimentConfig, StageError, load_config, case_grid, parse_eps, run_case, sweep,
)
from .problems import KAPPAS

# CLI flag -> config key
FLAG_KEYS = {
    "structure": "structure_id", "kappa": "kappa", "eps": "eps", "layers": "layers",
    "n_fine": "n_fine", "grad_load": "grad_load", "out": "out", "dump_basis": "dump_basis",
    "convention": "convention", "center": "center", "workers": "workers",
}


def _common(p, multi):
    nargs = "+" if multi else None
    p.add_argument("--config", help="flat JSON file of config keys; explicit flags override it")
    p.add_argument("--structure", type=int, choices=(1, 2), nargs=nargs)
    p.add_argument("--kappa", choices=sorted(KAPPAS), nargs=nargs)
    p.add_argument("--eps", type=parse_eps, nargs=nargs, help="coarse size as 1/N")
    p.add_argument("--layers", type=int, choices=(0, 1, 2, 3), nargs=nargs)
    p.add_argument("--n-fine", dest="n_fine", type=int)
    p.add_argument("--grad-load", dest="grad_load", choices=("on", "off"))
    p.add_argument("--convention", choices=("sqrt", "ratio"), help="error with or without the square root")
    p.add_argument("--center", choices=("anchored", "per_block"))
    p.add_argument("--workers", type=int, help="processes for the per-block cell problems")
    p.add_argument("--out", help="output directory")
    p.add_argument("--dump-basis", dest="dump_basis", action="store_true", default=None,
                   help="also write every block's cell-problem fields")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="multicontinuum", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("run", help="run one case"), multi=False)
    sw = sub.add_parser("sweep", help="run a grid of cases and tabulate the errors")
    _common(sw, multi=True)
    sw.add_argument("--jobs", type=int, default=1, help="cases run concurrently")
    return parser


def _settings(args):
    settings = load_config(args.config) if args.config else {}
    for flag, key in FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            settings[key] = value
    if isinstance(settings.get("grad_load"), str):
        settings["grad_load"] = settings["grad_load"] == "on"
    return settings


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = _settings(args)
        if args.command == "run":
            config = ExperimentConfig.from_dict(settings)
            report = run_case(config)
            print(f"{config.tag}: e1={report.e1:.6e} e2={report.e2:.6e} -> {config.out}")
            return 0
        grid = {
            "structures": settings.pop("structure_id", (1, 2)),
            "kappas": settings.pop("kappa", ("one", "sine")),
            "eps": settings.pop("eps", EPS_CHOICES),
            "layers": settings.pop("layers", (0, 1, 2)),
        }
        grid = {k: v if isinstance(v, (list, tuple)) else [v] for k, v in grid.items()}
        out = settings.pop("out", "runs/sweep")
        configs = case_grid(**grid, **settings)
        reports, failures = sweep(configs, out, jobs=args.jobs)
        for r in reports:
            print(f"{r.config.tag}: e1={r.e1:.6e} e2={r.e2:.6e}")
        for tag, err in failures.items():
            print(f"{tag}: FAILED {err}", file=sys.stderr)
        return 1 if failures else 0
    except (ConfigError, StageError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
