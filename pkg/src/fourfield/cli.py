"""Command-line driver: convergence tables, stability scans, inf-sup reports.

    python -m fourfield convergence --dim 2 --quartet L1N11R2D0 --levels 4,6,8
    python -m fourfield stability-scan --dim 3 --out verdicts.json
    python -m fourfield infsup-report --quartet L1N11R2D0,L2N11R1D0 --out fr.csv

A flat ``key=value`` file given with ``--config`` supplies defaults;
explicit flags win.  Output files carry no timestamps, so reruns with the
same configuration are byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import sys
from dataclasses import dataclass, fields
from pathlib import Path

from .elements import ElementQuartet, UnsupportedElementError, all_quartets
from .material import NeoHookean, exact_cube, exact_square
from .mesh import SPLITS, build_structured_cube, build_structured_square, tag_boundary
from .stability import (
    KINDS,
    analyse_mesh,
    assemble_norm_gram,
    infsup_alpha,
    reference_system,
    scan_combinations,
    scan_quartet,
    submatrix_shape,
    verdicts_to_json,
)
from .system import build_spaces, l2_errors, manufactured_loads, newton_solve, reference_state

log = logging.getLogger("fourfield")

DEFAULT_LEVELS = {
    "convergence": {2: (4, 6, 8), 3: (2, 3, 4)},
    "stability-scan": {2: (2, 4), 3: (1, 2)},
    "infsup-report": {2: (2, 4, 8), 3: (1, 2)},
}

CONVERGENCE_COLUMNS = (
    "quartet", "n", "h", "dof", "E_U", "E_K", "E_P", "E_p",
    "r_U", "r_K", "r_P", "r_p", "converged", "iterations", "stable", "poor", "note",
)
INFSUP_COLUMNS = ("quartet", "n", "h", "kind", "rows", "cols", "FR", "alpha", "rank_tolerance")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class StudyConfig:
    dim: int = 2
    quartets: tuple = ("L1N11R2D0",)
    levels: tuple | None = None
    mu: float = 1.0
    tol: float = 1e-9
    maxit: int = 25
    split: str = "clamped-bottom"
    reference_pressure: float = 0.0
    out: str | None = None
    force: bool = False

    def levels_for(self, command: str) -> tuple:
        return tuple(self.levels) if self.levels else DEFAULT_LEVELS[command][self.dim]

    def validate(self) -> "StudyConfig":
        if self.dim not in (2, 3):
            raise ConfigError(f"dim must be 2 or 3, got {self.dim}")
        if self.split not in SPLITS:
            raise ConfigError(f"unknown boundary split {self.split!r}; choose from {sorted(SPLITS)}")
        if self.mu <= 0 or self.tol <= 0 or self.maxit < 0:
            raise ConfigError("mu and tol must be positive and maxit nonnegative")
        if self.levels is not None and (not self.levels or min(self.levels) < 1):
            raise ConfigError("levels must be positive integers")
        for q in self.quartets:
            ElementQuartet.parse(q)
        return self


# --------------------------------------------------------------------------
# config parsing


def _parse_quartets(text: str) -> tuple:
    text = text.strip()
    if text == "all":
        return tuple(q.name for q in all_quartets())
    names = tuple(t.strip() for t in text.split(",") if t.strip())
    try:
        return tuple(ElementQuartet.parse(n).name for n in names)
    except UnsupportedElementError as exc:
        raise ConfigError(str(exc)) from exc


def _parse_levels(text: str) -> tuple:
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError as exc:
        raise ConfigError(f"bad levels {text!r}") from exc


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"bad boolean {text!r}")


_CONVERTERS = {
    "dim": int,
    "quartet": _parse_quartets,
    "quartets": _parse_quartets,
    "levels": _parse_levels,
    "mu": float,
    "tol": float,
    "maxit": int,
    "split": str,
    "reference_pressure": float,
    "out": str,
    "force": _parse_bool,
}


def read_config_file(path: str | Path) -> dict:
    """Flat key=value pairs; blank lines and # comments are ignored."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _CONVERTERS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            values["quartets" if key == "quartet" else key] = _CONVERTERS[key](value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from exc
    return values


def build_config(args: argparse.Namespace) -> StudyConfig:
    values = read_config_file(args.config) if args.config else {}
    for f in fields(StudyConfig):
        flag = getattr(args, f.name, None)
        if flag is not None and flag is not False:
            values[f.name] = flag
    try:
        return StudyConfig(**values).validate()
    except (TypeError, UnsupportedElementError) as exc:
        raise ConfigError(str(exc)) from exc


# --------------------------------------------------------------------------
# helpers


def _mesh(dim: int, n: int, split: str):
    build = build_structured_square if dim == 2 else build_structured_cube
    return tag_boundary(build(n), SPLITS[split])


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return "" if math.isnan(x) else f"{x:.6e}"
    return str(x)


def _csv(rows: list[dict], columns) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row.get(c)) for c in columns])
    return buf.getvalue()


def _emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def rate(e_coarse: float, e_fine: float, h_coarse: float, h_fine: float) -> float:
    if e_coarse <= 0 or e_fine <= 0:
        return float("nan")
    return math.log(e_coarse / e_fine) / math.log(h_coarse / h_fine)


# --------------------------------------------------------------------------
# commands


def convergence_rows(config: StudyConfig, quartet: str) -> list[dict]:
    mat = NeoHookean(config.mu)
    exact = exact_square() if config.dim == 2 else exact_cube()
    loads = manufactured_loads(mat, exact)
    scan_meshes = [(f"n{n}", _mesh(config.dim, n, config.split))
                   for n in DEFAULT_LEVELS["stability-scan"][config.dim]]
    verdict = scan_quartet(quartet, scan_meshes, mat, config.reference_pressure)
    if not verdict.stable and not config.force:
        raise ConfigError(f"{quartet} fails the inf-sup checks ({verdict.violations()}); use --force")
    rows = []
    prev = None
    for n in config.levels_for("convergence"):
        mesh = _mesh(config.dim, n, config.split)
        spaces = build_spaces(mesh, quartet)
        report = newton_solve(spaces, mat, loads, exact.U, reference_state(spaces),
                              tol=config.tol, maxit=config.maxit)
        errs = l2_errors(spaces, report.state, exact, mat)
        h = mesh.diameter()
        row = {"quartet": quartet, "n": n, "h": h, "dof": sum(spaces.dims), **errs,
               "converged": report.converged, "iterations": report.iterations,
               "stable": verdict.stable, "note": report.message}
        if prev is not None:
            for f in ("U", "K", "P", "p"):
                row[f"r_{f}"] = rate(prev[1][f"E_{f}"], errs[f"E_{f}"], prev[0], h)
        rows.append(row)
        prev = (h, errs)
        log.info("%s n=%d dof=%d newton=%d %s", quartet, n, row["dof"], report.iterations, errs)
    poor = any(r.get("r_P", 1.0) < 0.5 for r in rows[1:]) or any(
        b["E_P"] >= a["E_P"] for a, b in zip(rows, rows[1:]))
    for r in rows:
        r["poor"] = poor
    return rows


def cmd_convergence(config: StudyConfig) -> str:
    rows = []
    for q in config.quartets:
        rows.extend(convergence_rows(config, q))
    return _csv(rows, CONVERGENCE_COLUMNS)


def cmd_stability_scan(config: StudyConfig, quartets=None) -> tuple[str, list]:
    meshes = [(f"n{n}", _mesh(config.dim, n, config.split)) for n in config.levels_for("stability-scan")]
    verdicts = scan_combinations(meshes, NeoHookean(config.mu), quartets, config.reference_pressure)
    return verdicts_to_json(verdicts), verdicts


def cmd_infsup_report(config: StudyConfig) -> str:
    mat = NeoHookean(config.mu)
    rows = []
    for q in config.quartets:
        for n in config.levels_for("infsup-report"):
            mesh = _mesh(config.dim, n, config.split)
            spaces = build_spaces(mesh, q)
            mv = analyse_mesh(spaces, mat, config.reference_pressure, f"n{n}")
            system = reference_system(spaces, mat, config.reference_pressure)
            est = infsup_alpha(system, assemble_norm_gram(spaces, system.free_U))
            for kind in KINDS:
                r, c = submatrix_shape(system.dims, kind)
                rows.append({"quartet": q, "n": n, "h": mv.h, "kind": kind.value, "rows": r, "cols": c,
                             "FR": mv.FR[kind.value], "alpha": est.alpha, "rank_tolerance": est.rank_tolerance})
    return _csv(rows, INFSUP_COLUMNS)


# --------------------------------------------------------------------------
# entry point


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value file; flags override it")
    common.add_argument("--dim", type=int, choices=(2, 3))
    common.add_argument("--quartet", dest="quartets", type=_parse_quartets,
                        help="quartet name, comma list, or 'all'")
    common.add_argument("--levels", type=_parse_levels, help="mesh subdivisions, e.g. 4,6,8")
    common.add_argument("--mu", type=float, help="shear modulus (default 1)")
    common.add_argument("--tol", type=float, help="Newton tolerance (default 1e-9)")
    common.add_argument("--maxit", type=int, help="Newton iteration cap (default 25)")
    common.add_argument("--split", choices=sorted(SPLITS), help="boundary split (default clamped-bottom)")
    common.add_argument("--reference-pressure", dest="reference_pressure", type=float,
                        help="pressure of the undeformed state used for stability matrices (default 0)")
    common.add_argument("--out", help="output file (default stdout)")
    common.add_argument("--force", action="store_true", help="run convergence on unstable quartets")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="fourfield", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("convergence", parents=[common], help="L2 errors and rates for manufactured solutions")
    sub.add_parser("stability-scan", parents=[common], help="inf-sup classification of quartets (JSON)")
    sub.add_parser("infsup-report", parents=[common], help="full-rankness and alpha versus h (CSV)")
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        config = build_config(args)
        if args.command == "convergence":
            _emit(cmd_convergence(config), config.out)
        elif args.command == "stability-scan":
            explicit = args.quartets is not None or (args.config and "quartets" in read_config_file(args.config))
            text, verdicts = cmd_stability_scan(config, config.quartets if explicit else None)
            _emit(text + "\n", config.out)
            stable = [v.quartet for v in verdicts if v.stable]
            print(f"{len(stable)} of {len(verdicts)} quartets stable in {config.dim}D", file=sys.stderr)
        else:
            _emit(cmd_infsup_report(config), config.out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
