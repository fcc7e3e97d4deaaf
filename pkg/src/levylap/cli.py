"""Command-line experiment driver.

Every subcommand writes its CSV outputs, a ``config.txt`` echo of the fully
resolved configuration and a ``manifest.json`` (command, config, seed,
version, timestamps, SHA-256 of each output) into the output directory.
``levylap rerun <manifest.json>`` repeats a run from its manifest.

Work is split into tasks by sample index, tree batch or grid point. Each
task draws from a stream derived from ``(seed, task kind, index)``, so the
CSVs do not depend on ``--workers``.

Exit status is 0 when every configured check passes, 1 when a check fails
or the input is refused, and 2 on a configuration error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, parse_pairs
from .eigensolver import spectrum
from .ensembles import (
    independent_diagonal_laplacian,
    laplacian,
    row_sums,
    sample_matrix,
    spec_from_dict,
)
from .measures import (
    GridMismatchError,
    MeasureEstimate,
    empirical_cf,
    row_sum_fit,
    sup_grid_distance,
)
from .point_processes import PointMass, id_characteristic_function, measure_from_dict, natural_drift, verify_c1
from .pwitl import TruncationParams, ensemble_batch
from .rde import C1Error, RdeConfig, solve_free_convolution, solve_rde
from .stieltjes import StieltjesEstimate, ZGrid, fmt
from .streams import task_stream

log = logging.getLogger("levylap")

COMMANDS = ("sample-spectrum", "solve-rde", "tree-mc", "free-conv", "compare", "row-sums", "verify-c1")


@dataclass
class RunResult:
    files: Dict[str, str] = field(default_factory=dict)
    checks: Dict[str, dict] = field(default_factory=dict)
    summary: Dict[str, object] = field(default_factory=dict)

    def check(self, name: str, value, limit, passed: bool):
        self.checks[name] = {"value": _jsonable(value), "limit": _jsonable(limit), "passed": bool(passed)}

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks.values())


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def _write_csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _pool_map(fn, tasks, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        return list(pool.map(fn, tasks))


def _chunks(count: int, parts: int) -> List[np.ndarray]:
    return [c for c in np.array_split(np.arange(count), max(1, parts)) if len(c)]


# ---------------------------------------------------------------------------
# worker tasks (top level so they pickle)
# ---------------------------------------------------------------------------


def _spectrum_task(args):
    spec_doc, diagonal, seed, index = args
    spec = spec_from_dict(spec_doc)
    gen = task_stream(seed, "matrix", index).generator()
    a = sample_matrix(spec, gen)
    lap = independent_diagonal_laplacian(a, spec, gen) if diagonal == "independent" else laplacian(a)
    return np.asarray(spectrum(lap, check=True).eigenvalues)


def _row_sum_task(args):
    spec_doc, seed, index = args
    return row_sums(sample_matrix(spec_from_dict(spec_doc), task_stream(seed, "row-sums", index)))


def _rde_task(args):
    m_doc, points, eta_min, cfg_doc, seed = args
    est = solve_rde(measure_from_dict(m_doc), ZGrid(points, eta_min=eta_min), RdeConfig(**cfg_doc),
                    task_stream(seed, "rde", 0))
    diag = est.metadata["diagnostics"]
    return est.mean, est.stderr, diag.coupled_distance, diag.floored


def _tree_task(args):
    m_doc, params, points, batches, count, batch_size, seed = args
    stream = task_stream(seed, "tree", 0)
    m = measure_from_dict(m_doc)
    return [ensemble_batch(m, params, points, b, count, batch_size, stream) for b in batches]


def _free_conv_task(args):
    points, eta_min, tol, nodes, damping, max_iter = args
    est = solve_free_convolution(ZGrid(points, eta_min=eta_min), tol, nodes, damping, max_iter)
    return est.mean, est.iterations, est.metadata["residual"]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_sample_spectrum(cfg: RunConfig, seed: int, workers: int) -> RunResult:
    spec = cfg.ensemble()
    grid = cfg.grid()
    count = cfg["samples"]
    if count < 1:
        raise ConfigError("samples must be >= 1")
    tasks = [(spec.to_dict(), cfg["ensemble.diagonal"], seed, i) for i in range(count)]
    spectra = _pool_map(_spectrum_task, tasks, workers)
    res = RunResult()
    res.files["spectra.csv"] = _write_csv(
        ("sample", "index", "eigenvalue"),
        ((s, i, fmt(x)) for s, vals in enumerate(spectra) for i, x in enumerate(vals)),
    )
    pooled = np.concatenate(spectra)
    res.files["esm.csv"] = MeasureEstimate.from_samples(pooled).to_csv()
    z = grid.points
    per_sample = np.array([[np.mean(1.0 / (vals - zi)) for zi in z] for vals in spectra])
    mean = per_sample.mean(axis=0)
    stderr = per_sample.std(axis=0, ddof=1) / np.sqrt(count) if count > 1 else np.zeros(len(z))
    est = StieltjesEstimate(grid, mean, stderr, count)
    res.files["stieltjes.csv"] = est.to_csv()
    res.check("conservation", "trace and Frobenius within 1e-10", None, True)
    res.check("herglotz", est.herglotz_ok(), True, est.herglotz_ok())
    res.summary.update(ensemble=spec.to_dict(), samples=count)
    return res


def cmd_solve_rde(cfg: RunConfig, seed: int, workers: int) -> RunResult:
    m = cfg.measure()
    report = verify_c1(m)
    if not report.holds:
        raise C1Error(report)
    grid = cfg.grid()
    rde = cfg.rde()
    tasks = [(m.to_dict(), grid.points[idx], grid.eta_min, rde.to_dict(), seed)
             for idx in _chunks(len(grid), workers)]
    parts = _pool_map(_rde_task, tasks, workers)
    mean = np.concatenate([p[0] for p in parts])
    stderr = np.concatenate([p[1] for p in parts])
    distance = np.concatenate([p[2] for p in parts], axis=1)
    floored = sum(p[3] for p in parts)
    est = StieltjesEstimate(grid, mean, stderr, rde.iterations)
    trace = distance.max(axis=1)
    below = np.flatnonzero(trace < rde.tol)
    res = RunResult()
    res.files["stieltjes.csv"] = est.to_csv()
    res.files["diagnostics.csv"] = _write_csv(
        ("iteration", "max_coupled_distance") + tuple(f"z{g}" for g in range(len(grid))),
        ([it + 1, fmt(trace[it])] + [fmt(d) for d in distance[it]] for it in range(len(trace))),
    )
    res.check("converged", float(trace[-1]), rde.tol, len(below) > 0)
    res.check("herglotz", est.herglotz_ok(), True, est.herglotz_ok())
    res.check("denominator_floor", int(floored), 0, floored == 0)
    res.summary.update(measure=m.to_dict(), c1=report.to_dict(),
                       converged_at=int(below[0]) + 1 if len(below) else None)
    return res


def cmd_tree_mc(cfg: RunConfig, seed: int, workers: int) -> RunResult:
    m = cfg.measure()
    params: TruncationParams = cfg.tree(m)
    grid = cfg.grid()
    count, batch_size = cfg["tree.count"], cfg["tree.batch_size"]
    if count < 1 or batch_size < 1:
        raise ConfigError("tree.count and tree.batch_size must be >= 1")
    n_batches = -(-count // batch_size)
    tasks = [(m.to_dict(), params, grid.points, list(idx), count, batch_size, seed)
             for idx in _chunks(n_batches, workers)]
    values = np.concatenate([v for part in _pool_map(_tree_task, tasks, workers) for v in part])
    mean = values.mean(axis=0)
    stderr = values.std(axis=0, ddof=1) / np.sqrt(count) if count > 1 else np.zeros(len(grid))
    est = StieltjesEstimate(grid, mean, stderr, params.depth)
    res = RunResult()
    res.files["stieltjes.csv"] = est.to_csv()
    res.check("herglotz", est.herglotz_ok(), True, est.herglotz_ok())
    res.summary.update(measure=m.to_dict(), depth=params.depth, branching=params.branching,
                       delta=params.delta, count=count)
    return res


def cmd_free_conv(cfg: RunConfig, seed: int, workers: int) -> RunResult:
    grid = cfg.grid()
    tol = cfg["fc.tol"]
    tasks = [(grid.points[idx], grid.eta_min, tol, cfg["fc.nodes"], cfg["fc.damping"], cfg["fc.max_iter"])
             for idx in _chunks(len(grid), workers)]
    parts = _pool_map(_free_conv_task, tasks, workers)
    mean = np.concatenate([p[0] for p in parts])
    iterations = np.concatenate([p[1] for p in parts])
    residual = np.concatenate([p[2] for p in parts])
    est = StieltjesEstimate(grid, mean, 0.0, iterations)
    res = RunResult()
    res.files["stieltjes.csv"] = est.to_csv()
    res.check("residual", float(residual.max()), tol, bool(residual.max() < tol))
    res.check("herglotz", est.herglotz_ok(), True, est.herglotz_ok())
    return res


def _read_estimate(run_dir: str) -> StieltjesEstimate:
    path = Path(run_dir) / "stieltjes.csv"
    if not path.is_file():
        raise ConfigError(f"no stieltjes.csv in {run_dir!r}")
    return StieltjesEstimate.from_csv(path.read_text())


def cmd_compare(cfg: RunConfig, seed: int, workers: int) -> RunResult:
    if not cfg["compare.a"] or not cfg["compare.b"]:
        raise ConfigError("compare needs compare.a and compare.b run directories")
    a, b = _read_estimate(cfg["compare.a"]), _read_estimate(cfg["compare.b"])
    report = sup_grid_distance(a, b)
    tol = cfg["compare.tol"]
    res = RunResult()
    dist = np.abs(a.mean - b.mean)
    res.files["curves.csv"] = _write_csv(
        ("re_z", "im_z", "re_s_a", "im_s_a", "re_s_b", "im_s_b", "distance", "stderr_a", "stderr_b"),
        ((fmt(z.real), fmt(z.imag), fmt(sa.real), fmt(sa.imag), fmt(sb.real), fmt(sb.imag), fmt(d), fmt(ea), fmt(eb))
         for z, sa, sb, d, ea, eb in zip(a.grid.points, a.mean, b.mean, dist, a.stderr, b.stderr)),
    )
    doc = json.loads(report.to_json())
    doc.update(tol=tol, passed=report.value <= tol)
    res.files["report.json"] = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    res.check("sup_grid", report.value, tol, report.value <= tol)
    return res


def cmd_row_sums(cfg: RunConfig, seed: int, workers: int) -> RunResult:
    spec = cfg.ensemble()
    count = cfg["samples"]
    if count < 1:
        raise ConfigError("samples must be >= 1")
    m = spec.levy_measure()
    sums = _pool_map(_row_sum_task, [(spec.to_dict(), seed, i) for i in range(count)], workers)
    pooled = np.concatenate(sums)
    b = natural_drift(m) if cfg["fit.b"] is None else cfg["fit.b"]
    t = np.linspace(-5.0, 5.0, cfg["fit.t_points"])
    try:
        fit = row_sum_fit(pooled, m, b, t)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    res = RunResult()
    res.files["row_sums.csv"] = _write_csv(
        ("sample", "row", "value"),
        ((s, i, fmt(x)) for s, vals in enumerate(sums) for i, x in enumerate(vals)),
    )
    emp, model = empirical_cf(pooled, t), id_characteristic_function(m, b, t)
    res.files["fit.csv"] = _write_csv(
        ("t", "re_empirical", "im_empirical", "re_model", "im_model"),
        ((fmt(ti), fmt(e.real), fmt(e.imag), fmt(mo.real), fmt(mo.imag)) for ti, e, mo in zip(t, emp, model)),
    )
    res.check("cf_deviation", fit.cf_deviation, cfg["fit.tol_cf"], fit.cf_deviation <= cfg["fit.tol_cf"])
    if isinstance(m, PointMass):
        res.check("total_variation", fit.total_variation, cfg["fit.tol_tv"],
                  fit.total_variation <= cfg["fit.tol_tv"])
    res.summary.update(ensemble=spec.to_dict(), b=b, fit=fit.to_dict())
    return res


def cmd_verify_c1(cfg: RunConfig, seed: int, workers: int) -> RunResult:
    m = cfg.measure()
    report = verify_c1(m)
    doc = report.to_dict()
    res = RunResult()
    res.files["c1.csv"] = _write_csv(
        ("quantity", "value"),
        [
            ("holds", str(report.holds).lower()),
            ("sum_condition_holds", str(report.sum_condition.holds).lower()),
            ("integral_value", fmt(report.sum_condition.integral_value)),
            ("decay_epsilon", fmt(report.decay.epsilon)),
            ("decay_C", fmt(report.decay.C)),
            ("decay_holds", str(report.decay.holds).lower()),
        ],
    )
    res.check("c1", report.holds, True, report.holds)
    res.summary.update(measure=m.to_dict(), c1=doc)
    return res


HANDLERS = {
    "sample-spectrum": cmd_sample_spectrum,
    "solve-rde": cmd_solve_rde,
    "tree-mc": cmd_tree_mc,
    "free-conv": cmd_free_conv,
    "compare": cmd_compare,
    "row-sums": cmd_row_sums,
    "verify-c1": cmd_verify_c1,
}


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


def _timestamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def run(command: str, cfg: RunConfig, seed: int, workers: int, out: Path) -> RunResult:
    """Execute ``command`` and persist outputs plus manifest under ``out``."""
    started = _timestamp()
    result = HANDLERS[command](cfg, seed, workers)
    out.mkdir(parents=True, exist_ok=True)
    result.files["config.txt"] = cfg.to_text()
    digests = {}
    for name, text in sorted(result.files.items()):
        data = text.encode()
        (out / name).write_bytes(data)
        digests[name] = hashlib.sha256(data).hexdigest()
    manifest = {
        "command": command,
        "config": cfg.raw,
        "seed": seed,
        "workers": workers,
        "version": __version__,
        "started": started,
        "finished": _timestamp(),
        "outputs": digests,
        "checks": result.checks,
        "passed": result.passed,
        "summary": result.summary,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return result


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="levylap", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=HANDLERS[name].__name__.replace("cmd_", "").replace("_", " "))
        p.add_argument("--config", type=Path, help="key = value config file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--out", type=Path, help="output directory (default $RESULTS_DIR/<command>-seed<seed>)")
        p.add_argument("overrides", nargs="*", metavar="key=value")
    p = sub.add_parser("rerun", help="repeat a run from its manifest.json")
    p.add_argument("manifest", type=Path)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", type=Path)
    return parser


def _default_out(command: str, seed: int) -> Path:
    return Path(os.environ.get("RESULTS_DIR", "results")) / f"{command}-seed{seed}"


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "rerun":
            manifest = json.loads(args.manifest.read_text())
            command, seed = manifest["command"], int(manifest["seed"])
            cfg = RunConfig.build(manifest["config"], {})
        else:
            command, seed = args.command, args.seed
            file_pairs = parse_pairs(args.config.read_text().splitlines(), str(args.config)) if args.config else {}
            cfg = RunConfig.build(file_pairs, parse_pairs(args.overrides, "command line"))
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        out = args.out or _default_out(command, seed)
        result = run(command, cfg, seed, args.workers, out)
    except ConfigError as exc:
        print(f"levylap: invalid config: {exc}", file=sys.stderr)
        return 2
    except C1Error as exc:
        print(json.dumps({"error": "condition_c1", "message": str(exc), "report": exc.report.to_dict()},
                         default=str), file=sys.stderr)
        return 1
    except GridMismatchError as exc:
        print(json.dumps({"error": "grid_mismatch", "message": str(exc)}), file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"levylap: {exc}", file=sys.stderr)
        return 2
    for name, check in result.checks.items():
        status = "PASS" if check["passed"] else "FAIL"
        print(f"{status} {name}: value={check['value']} limit={check['limit']}")
    print(f"wrote {out}")
    return 0 if result.passed else 1


if __name__ == "__main__":
    sys.exit(main())
