"""Configured runs, error metric, output files and parameter sweeps."""
import csv
import json
import logging
import platform
import shutil
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from itertools import product
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .cell_problems import FIELD_NAMES, solve_cell_problems
from .geometry import CONTINUA, build_mesh
from .macro import assemble_macro, solve_macro
from .problems import KAPPAS, scaled, source
from .reference import block_continuum_measures, continuum_averages, solve_reference
from .upscaling import upscale

log = logging.getLogger(__name__)

EPS_CHOICES = (Fraction(1, 10), Fraction(1, 20), Fraction(1, 40))
DIRECT_LIMIT = 600_000  # free nodes above which the reference uses CG


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage


def parse_eps(value):
    if isinstance(value, Fraction):
        return value
    if isinstance(value, str) and "/" in value:
        num, den = value.split("/", 1)
        return Fraction(int(num), int(den))
    if isinstance(value, (int, float, str)):
        return Fraction(float(value)).limit_denominator(10**6)
    raise ConfigError(f"cannot interpret eps={value!r}")


@dataclass
class ExperimentConfig:
    structure_id: int = 1
    kappa: str = "one"
    eps: Fraction = Fraction(1, 10)
    layers: int = 1
    n_fine: int = 80
    grad_load: bool = True
    convention: str = "sqrt"  # "sqrt" or "ratio" (no radical)
    dump_basis: bool = False
    center: str = "anchored"
    workers: int = 1
    source_scale: float = 1.0
    out: str = "runs/out"

    def __post_init__(self):
        self.eps = parse_eps(self.eps)
        self.validate()

    def validate(self):
        if self.structure_id not in (1, 2):
            raise ConfigError(f"structure_id must be 1 or 2, got {self.structure_id!r}")
        if self.kappa not in KAPPAS:
            raise ConfigError(f"kappa must be one of {sorted(KAPPAS)}, got {self.kappa!r}")
        if self.eps <= 0 or self.eps.numerator != 1:
            raise ConfigError(f"eps must be 1/N, got {self.eps}")
        if self.layers < 0:
            raise ConfigError("layers must be >= 0")
        if self.n_fine < 20 or self.n_fine % 4:
            raise ConfigError("n_fine must be >= 20 and divisible by 4")
        if self.convention not in ("sqrt", "ratio"):
            raise ConfigError("convention must be 'sqrt' or 'ratio'")
        if self.center not in ("anchored", "per_block"):
            raise ConfigError("center must be 'anchored' or 'per_block'")

    @property
    def tag(self):
        return f"s{self.structure_id}_{self.kappa}_eps{self.eps.denominator}_l{self.layers}"

    def to_dict(self):
        d = asdict(self)
        d["eps"] = f"{self.eps.numerator}/{self.eps.denominator}"
        return d

    @classmethod
    def from_dict(cls, data):
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


def load_config(path):
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict) or any(isinstance(v, (dict, list)) for v in data.values()):
        raise ConfigError("config file must be a flat key-value object")
    return data


def error_from_averages(macro_avg, ref_avg, present, convention="sqrt"):
    """Relative l2 discrepancy of block averages over blocks where ``present``."""
    diff = macro_avg[present] - ref_avg[present]
    den = float(np.sum(ref_avg[present] ** 2))
    if den == 0.0:
        raise ZeroDivisionError("reference averages vanish on this continuum")
    ratio = float(np.sum(diff ** 2)) / den
    return np.sqrt(ratio) if convention == "sqrt" else ratio


def relative_error(U, ref, i, convention="sqrt"):
    """e_2^(i) between a MacroSolution and a ReferenceSolution."""
    ref_avg = continuum_averages(ref)[i - 1]
    present = block_continuum_measures(ref.mesh)[i - 1] > 0
    return error_from_averages(U.block_averages()[i - 1], ref_avg, present, convention)


@dataclass
class ErrorReport:
    config: ExperimentConfig
    errors: tuple = None  # (e1, e2)
    errors_alt_grad_load: tuple = None  # with the gradient-load flag flipped
    ref_averages: np.ndarray = field(default=None, repr=False)
    macro_averages: np.ndarray = field(default=None, repr=False)
    timings: dict = field(default_factory=dict)
    failed_stage: str = None

    @property
    def e1(self):
        return self.errors[0]

    @property
    def e2(self):
        return self.errors[1]

    def error_row(self):
        if self.failed_stage is not None or self.errors is None:
            raise RuntimeError(f"refusing to serialize a failed run (stage {self.failed_stage})")
        c = self.config
        return {
            "structure": c.structure_id,
            "kappa": c.kappa,
            "eps": f"1/{c.eps.denominator}",
            "l": c.layers,
            "e1": repr(float(self.errors[0])),
            "e2": repr(float(self.errors[1])),
        }


# ------------------------------------------------------------------ outputs

ERROR_COLUMNS = ["structure", "kappa", "eps", "l", "e1", "e2"]


def _fmt(x):
    return repr(float(x))


def coefficient_columns():
    cols = ["p"]
    ij = [(j, i) for j in CONTINUA for i in CONTINUA]
    cols += [f"B_{j}{i}" for j, i in ij]
    cols += [f"Bm_{j}{i}_{m}" for j, i in ij for m in (1, 2)]
    cols += [f"Bbar_{j}{i}_{n}" for j, i in ij for n in (1, 2)]
    cols += [f"Bmn_{j}{i}_{m}{n}" for j, i in ij for m in (1, 2) for n in (1, 2)]
    cols += ["b_1", "b_2"]
    cols += [f"bgrad_{j}_{n}" for j in CONTINUA for n in (1, 2)]
    return cols


def coefficient_rows(coeffs):
    for k, p in enumerate(coeffs.blocks):
        row = [str(int(p))]
        row += [_fmt(v) for v in coeffs.B[k].reshape(-1)]
        row += [_fmt(v) for v in coeffs.Bm[k].reshape(-1)]
        row += [_fmt(v) for v in coeffs.Bbar[k].reshape(-1)]
        row += [_fmt(v) for v in coeffs.Bmn[k].reshape(-1)]
        row += [_fmt(v) for v in coeffs.b[k]]
        row += [_fmt(v) for v in coeffs.bgrad[k].reshape(-1)]
        yield row


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_errors_csv(path, reports):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=ERROR_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in reports:
            w.writerow(r.error_row())


def write_reference_fields(path, ref):
    mesh = ref.mesh
    patch = mesh.patch
    x1, x2 = patch.cell_midpoints
    u = patch.corner_values(ref.u).mean(axis=1)
    data = np.column_stack([x1, x2, u, patch.cell_labels])
    with open(path, "w") as fh:
        fh.write("x1,x2,u,label\n")
        np.savetxt(fh, data, fmt=["%.17g", "%.17g", "%.17g", "%d"], delimiter=",")


def write_macro_fields(path, macro):
    n1 = macro.n_coarse + 1
    r, c = np.divmod(np.arange(n1 * n1), n1)
    H = 1.0 / macro.n_coarse
    data = np.column_stack([c * H, r * H, macro.U[0].reshape(-1), macro.U[1].reshape(-1)])
    with open(path, "w") as fh:
        fh.write("x1,x2,U1,U2\n")
        np.savetxt(fh, data, fmt="%.17g", delimiter=",")


def write_averages(path, mesh, ref_avg, macro_avg):
    n = mesh.n_coarse
    rows = []
    for p in range(mesh.n_blocks):
        bi, bj = divmod(p, n)
        x1, x2 = mesh.block_center(p)
        vals = [ref_avg[0, p], ref_avg[1, p], macro_avg[0, p], macro_avg[1, p]]
        rows.append([p, bi, bj, _fmt(x1), _fmt(x2)] + ["nan" if np.isnan(v) else _fmt(v) for v in vals])
    _write_csv(path, ["p", "block_row", "block_col", "x1", "x2", "ref1", "ref2", "macro1", "macro2"], rows)


def dump_basis(directory, mesh, kappa, blocks, layers, center):
    directory.mkdir(parents=True, exist_ok=True)
    for p in blocks:
        basis = solve_cell_problems(mesh, kappa, p, layers, center=center)
        x1, x2 = basis.region.patch.free_coords
        data = np.column_stack([x1, x2, basis.fields])
        with open(directory / f"block_{p:05d}.csv", "w") as fh:
            fh.write(",".join(("x1", "x2") + FIELD_NAMES) + "\n")
            np.savetxt(fh, data, fmt="%.17g", delimiter=",")


# ------------------------------------------------------------------ pipeline


def _stage(name, timings, fn, *args, **kwargs):
    t0 = time.perf_counter()
    try:
        out = fn(*args, **kwargs)
    except Exception as exc:
        raise StageError(name, exc) from exc
    timings[name] = time.perf_counter() - t0
    return out


def compute_case(config):
    """Run the numerical pipeline without touching the filesystem.

    Returns (report, artifacts) where artifacts holds the mesh, reference,
    coefficients and macro solution.
    """
    timings = {}
    kappa = KAPPAS[config.kappa]
    f = source if config.source_scale == 1.0 else scaled(source, config.source_scale)
    mesh = _stage("rasterize", timings, build_mesh, config.structure_id, config.eps, config.n_fine)
    method = "direct" if mesh.patch.n_free <= DIRECT_LIMIT else "cg"
    ref = _stage("reference", timings, solve_reference, mesh, kappa, f, method=method)
    ref_avg = continuum_averages(ref)
    coeffs = _stage("cell_problems", timings, upscale, mesh, kappa, f, config.layers,
                    center=config.center, workers=config.workers)
    macro = _stage("macro", timings, lambda: solve_macro(assemble_macro(coeffs, mesh.n_coarse, config.grad_load)))
    alt = solve_macro(assemble_macro(coeffs, mesh.n_coarse, not config.grad_load))
    present = block_continuum_measures(mesh) > 0
    macro_avg = macro.block_averages()

    def errs(avg):
        return tuple(error_from_averages(avg[k], ref_avg[k], present[k], config.convention) for k in range(2))

    errors = _stage("errors", timings, errs, macro_avg)
    report = ErrorReport(
        config=config, errors=errors, errors_alt_grad_load=errs(alt.block_averages()),
        ref_averages=ref_avg, macro_averages=np.where(present, macro_avg, np.nan), timings=timings,
    )
    artifacts = {"mesh": mesh, "reference": ref, "coefficients": coeffs, "macro": macro,
                 "kappa": kappa, "source": f, "reference_method": method}
    return report, artifacts


def manifest(config, report, artifacts, files):
    mesh = artifacts["mesh"]
    return {
        "package_version": __version__,
        "config": config.to_dict(),
        "structure_id": config.structure_id,
        "eps": f"1/{config.eps.denominator}",
        "n_fine": config.n_fine,
        "n_fine_note": None if config.n_fine == 80 else f"reduced fine resolution H/{config.n_fine}",
        "unit_cell_channels": [asdict(ch) for ch in mesh.structure.channels],
        "error_convention": config.convention,
        "grad_load": config.grad_load,
        "errors": list(report.errors),
        "errors_with_grad_load_flipped": list(report.errors_alt_grad_load),
        "reference_solver": artifacts["reference_method"],
        "reference_free_nodes": int(mesh.patch.n_free),
        "max_constraint_residual": float(np.max(artifacts["coefficients"].residual)),
        "macro_residual": artifacts["macro"].residual,
        "kernel_backend": kernels.BACKEND,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "timings_s": report.timings,
        "files": files,
    }


def run_case(config, write=True):
    """Run one configured case and write its outputs into ``config.out``.

    On failure every file created by this call is removed and the
    :class:`StageError` is re-raised.
    """
    out = Path(config.out)
    created_dir = not out.exists()
    written = []
    try:
        report, artifacts = compute_case(config)
        if not write:
            return report
        out.mkdir(parents=True, exist_ok=True)
        mesh = artifacts["mesh"]

        def target(name):
            path = out / name
            written.append(path)
            return path

        write_errors_csv(target("errors.csv"), [report])
        _write_csv(target("coefficients.csv"), coefficient_columns(), coefficient_rows(artifacts["coefficients"]))
        write_reference_fields(target("fields_ref.csv"), artifacts["reference"])
        write_macro_fields(target("fields_macro.csv"), artifacts["macro"])
        write_averages(target("averages.csv"), mesh, report.ref_averages, report.macro_averages)
        write_geometry(target("geometry.csv"), mesh)
        if config.dump_basis:
            written.append(out / "basis")
            _stage("basis_dump", report.timings, dump_basis, out / "basis", mesh, artifacts["kappa"],
                   range(mesh.n_blocks), config.layers, config.center)
        files = sorted(p.name for p in written)
        with open(target("manifest.json"), "w") as fh:
            json.dump(manifest(config, report, artifacts, files), fh, indent=2, sort_keys=True)
        return report
    except BaseException:
        for path in written:
            if path.is_dir():
                shutil.rmtree(path, ignore_errors=True)
            elif path.exists():
                path.unlink()
        if created_dir and out.exists() and not any(out.iterdir()):
            out.rmdir()
        raise


def write_geometry(path, mesh):
    """Cell labels as (row, col, label) for non-solid cells."""
    r, c = np.nonzero(mesh.labels)
    data = np.column_stack([r, c, mesh.labels[r, c]])
    with open(path, "w") as fh:
        fh.write("row,col,label\n")
        np.savetxt(fh, data, fmt="%d", delimiter=",")


# ------------------------------------------------------------------ sweeps


def case_grid(structures=(1, 2), kappas=("one", "sine"), eps=EPS_CHOICES, layers=(0, 1, 2), **common):
    return [
        ExperimentConfig(structure_id=s, kappa=k, eps=e, layers=l, **common)
        for s, k, e, l in product(structures, kappas, eps, layers)
    ]


def _sweep_task(config):
    try:
        return config, run_case(config), None
    except Exception as exc:  # recorded by the collector
        return config, None, f"{type(exc).__name__}: {exc}"


def format_table(reports, structure_id, kappa):
    """Plain-text table: rows l, column pairs (e1, e2) per eps."""
    sel = [r for r in reports if r.config.structure_id == structure_id and r.config.kappa == kappa]
    eps_list = sorted({r.config.eps for r in sel}, reverse=True)
    layers = sorted({r.config.layers for r in sel})
    lookup = {(r.config.eps, r.config.layers): r for r in sel}
    head1 = "l  " + "".join(f"| eps=1/{e.denominator:<19d}" for e in eps_list)
    head2 = "   " + "".join("| e1        e2          " for _ in eps_list)
    lines = [f"structure {structure_id}, kappa={kappa}", head1, head2]
    for l in layers:
        cells = []
        for e in eps_list:
            r = lookup.get((e, l))
            cells.append("| " + ("   --        --       " if r is None else f"{r.e1:.2e}  {r.e2:.2e}  "))
        lines.append(f"{l:<3d}" + "".join(cells))
    return "\n".join(lines) + "\n"


def sweep(configs, out, jobs=1):
    """Run every config into ``out/<tag>``; merge errors and write one table per (structure, kappa).

    Returns (reports, failures) where failures maps a case tag to its error.
    """
    configs = list(configs)
    if not configs:
        raise ConfigError("sweep needs at least one configuration")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    configs = [replace(c, out=str(out / c.tag)) for c in configs]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_task, configs))
    else:
        results = [_sweep_task(c) for c in configs]
    reports = [r for _, r, err in results if err is None]
    failures = {c.tag: err for c, _, err in results if err is not None}
    order = {c.tag: k for k, c in enumerate(configs)}
    reports.sort(key=lambda r: order[r.config.tag])
    write_errors_csv(out / "errors.csv", reports)
    groups = sorted({(r.config.structure_id, r.config.kappa) for r in reports})
    for s, k in groups:
        (out / f"table_s{s}_{k}.txt").write_text(format_table(reports, s, k))
    if failures:
        with open(out / "failures.log", "w") as fh:
            for tag, err in failures.items():
                fh.write(f"{tag}\t{err}\n")
        for tag, err in failures.items():
            log.error("case %s failed: %s", tag, err)
    return reports, failures

