"""Command-line front end: ``retrialpsa {analyze,validate,sweep}``.

Exit codes: 0 success, 2 model rejected, 3 numerical failure, 4 a
validation tolerance failed.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .errors import ModelError, NumericalError
from .metrics import mean_series, pade_from_series, truncated_mean
from .model import ModelSpec, busy_idle_probs, model_from_json, stability
from .oracle import solve_ctmc
from .psa import CoefficientEvaluator
from .sim import SimConfig, simulate

log = logging.getLogger("retrialpsa")

EXIT_OK, EXIT_MODEL, EXIT_NUMERIC, EXIT_ACCEPT = 0, 2, 3, 4
SWEEP_COLUMNS = ["grid_value", "engine", "EN1", "EN2", "ci1", "ci2", "p_busy", "error"]
ANALYZE_COLUMNS = ["xi", "rho", "p_busy", "EN1", "EN2", "last_term1", "last_term2",
                   "EN1_pade", "EN2_pade", "pade_defective", "error"]
VALIDATE_COLUMNS = ["xi", "EN1_psa", "EN2_psa", "EN1_oracle", "EN2_oracle", "relerr1_oracle",
                    "relerr2_oracle", "EN1_sim", "EN2_sim", "ci1", "ci2", "p_busy_oracle",
                    "p_busy_sim", "ci_busy", "pass", "error"]
DEFAULT_XI_GRID = "0:0.3:0.02"
ORACLE_TOL = 0.02
# sweepable model fields under their file names
PARAMS = {"lambda": "lam", "lambda1": "lam1", "lambda2": "lam2", "mu1_star": "mu1_star",
          "mu2_star": "mu2_star", "xi": "xi", "p1": "p1"}


@dataclasses.dataclass(frozen=True)
class RunManifest:
    command: str
    model_path: str
    out_path: str | None
    order: int
    pade: tuple[int, int]
    xi_grid: tuple[float, ...]
    seed: int
    caps: tuple[int, int]
    engines: tuple[str, ...] = ()
    param: str | None = None
    grid: tuple[float, ...] = ()
    model_hash: str = ""

    def to_json(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


# ---------------------------------------------------------------- parsing


def parse_grid(text: str) -> tuple[float, ...]:
    """``a:b:step`` (inclusive of ``b``) or a comma list; empty text gives an empty grid."""
    text = text.strip()
    if not text:
        return ()
    if ":" in text:
        a, b, step = (float(x) for x in text.split(":"))
        if step <= 0:
            raise argparse.ArgumentTypeError("grid step must be positive")
        n = math.floor((b - a) / step + 1e-9) + 1
        return tuple(round(a + i * step, 12) for i in range(max(n, 0)))
    return tuple(float(x) for x in text.split(","))


def _pair(text: str) -> tuple[int, int]:
    a, b = text.split(",")
    return int(a), int(b)


def _engines(text: str) -> tuple[str, ...]:
    names = tuple(x.strip() for x in text.split(",") if x.strip())
    bad = set(names) - {"psa", "pade", "sim", "oracle"}
    if bad:
        raise argparse.ArgumentTypeError(f"unknown engine(s): {sorted(bad)}")
    return names


def git_blob_hash(data: bytes) -> str:
    """Content hash in git's blob format."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def load_scenario(path: str) -> tuple[ModelSpec, dict, str]:
    """Model, optional ``sim`` block and content hash of a scenario file."""
    try:
        data = Path(path).read_bytes()
        obj = json.loads(data)
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelError(f"cannot read model file {path}: {exc}") from exc
    model = model_from_json(obj, {"sim"})
    sim_block = obj.get("sim", {})
    known = {f.name for f in dataclasses.fields(SimConfig)}
    unknown = set(sim_block) - known
    if unknown:
        raise ModelError(f"unknown field(s) in sim: {sorted(unknown)}")
    return model, sim_block, git_blob_hash(data)


# ---------------------------------------------------------------- output


def _fmt(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return "" if v is None else v


def write_rows(path: str | None, columns: Sequence[str], rows: list[dict], extra: dict | None = None) -> None:
    """CSV or JSON by extension; stdout CSV when ``path`` is None."""
    if path is not None and Path(path).suffix.lower() == ".json":
        doc = dict(extra or {})
        doc["rows"] = [{c: r.get(c) for c in columns} for r in rows]
        Path(path).write_text(json.dumps(doc, indent=2, default=_json_default) + "\n")
        return
    fh = open(path, "w", newline="") if path else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])
    finally:
        if path:
            fh.close()


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def write_manifest(man: RunManifest) -> None:
    doc = man.to_json()
    if man.out_path:
        Path(man.out_path + ".manifest.json").write_text(json.dumps(doc, indent=2) + "\n")
    else:
        print(json.dumps(doc), file=sys.stderr)


# ---------------------------------------------------------------- engines


def _sim_config(args, sim_block: dict, seed: int | None = None) -> SimConfig:
    kw = dict(sim_block)
    kw["seed"] = args.seed if seed is None else seed
    for name in ("events", "warmup", "replications"):
        val = getattr(args, name, None)
        if val is not None:
            kw[name] = val
    return SimConfig(**kw)


def _psa_series(model: ModelSpec, order: int):
    ev = CoefficientEvaluator(model.with_xi(0.0), order)
    return mean_series(ev, 1, order), mean_series(ev, 2, order)


def _busy(model: ModelSpec) -> float:
    return busy_idle_probs(model)[0] if model.variant.exponential else math.nan


def _map(fn: Callable, items: Sequence, jobs: int) -> list:
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(jobs) as pool:
        return list(pool.map(fn, items))  # map keeps grid order


# ---------------------------------------------------------------- commands


def cmd_analyze(args) -> int:
    model, _, digest = load_scenario(args.model)
    rep = stability(model)
    man = RunManifest("analyze", args.model, args.out, args.order, args.pade, args.xi_grid,
                      args.seed, args.caps, model_hash=digest)
    write_manifest(man)
    if not rep.stable:
        log.error("model is unstable (rho = %.6g); analysis refused", rep.rho)
        return EXIT_MODEL
    L, N = args.pade
    s1, s2 = _psa_series(model, max(args.order, L + N))
    use_pade = L + N > 0
    p1 = pade_from_series(s1, L, N) if use_pade else None
    p2 = pade_from_series(s2, L, N) if use_pade else None
    p_busy = _busy(model)
    rows = []
    for xi in args.xi_grid:
        t1 = truncated_mean(s1, xi, args.order)
        t2 = truncated_mean(s2, xi, args.order)
        row = {"xi": xi, "rho": rep.rho, "p_busy": p_busy, "EN1": t1.value, "EN2": t2.value,
               "last_term1": t1.last_term, "last_term2": t2.last_term}
        if use_pade:
            row.update(EN1_pade=float(p1(xi)), EN2_pade=float(p2(xi)),
                       pade_defective=p1.defective or p2.defective)
        if t1.value < 0 or t2.value < 0:
            row["error"] = "negative mean: truncation untrusted"
        rows.append(row)
    extra = {"stability": {"rho": rep.rho, "stable": rep.stable, "formula": rep.variant_formula,
                           "disagreements": list(rep.disagreements)},
             "p_busy": p_busy,
             "coefficients": {"v1": s1.coefficients, "v2": s2.coefficients}}
    write_rows(args.out, ANALYZE_COLUMNS, rows, extra)
    if args.out and Path(args.out).suffix.lower() != ".json":
        coef_path = str(Path(args.out).with_suffix("")) + ".coefficients.csv"
        write_rows(coef_path, ["m", "v1", "v2"],
                   [{"m": m, "v1": float(a), "v2": float(b)}
                    for m, (a, b) in enumerate(zip(s1.coefficients, s2.coefficients))])
    print(f"rho = {rep.rho:.6f}", file=sys.stderr)
    return EXIT_OK


def cmd_validate(args) -> int:
    model, sim_block, digest = load_scenario(args.model)
    man = RunManifest("validate", args.model, args.out, args.order, args.pade, args.xi_grid,
                      args.seed, args.caps, args.engines, model_hash=digest)
    write_manifest(man)
    if not stability(model).stable:
        log.error("model is unstable; validation refused")
        return EXIT_MODEL
    s1, s2 = _psa_series(model, args.order)
    use_oracle = "oracle" in args.engines and model.variant.exponential
    use_sim = "sim" in args.engines

    def point(item):
        i, xi = item
        m = model.with_xi(xi)
        e1 = truncated_mean(s1, xi).value
        e2 = truncated_mean(s2, xi).value
        row = {"xi": xi, "EN1_psa": e1, "EN2_psa": e2}
        ok = True
        try:
            if use_oracle:
                sol = solve_ctmc(m, args.caps)
                r1 = abs(e1 - sol.EN1) / sol.EN1 if sol.EN1 else abs(e1)
                r2 = abs(e2 - sol.EN2) / sol.EN2 if sol.EN2 else abs(e2)
                row.update(EN1_oracle=sol.EN1, EN2_oracle=sol.EN2, relerr1_oracle=r1,
                           relerr2_oracle=r2, p_busy_oracle=sol.p_busy)
                ok &= max(r1, r2) < ORACLE_TOL
            if use_sim:
                res = simulate(m, _sim_config(args, sim_block, args.seed + i))
                # departure-epoch means for general service
                n1, n2 = (res.EN1, res.EN2) if m.variant.exponential else (res.EN1_dep, res.EN2_dep)
                c1, c2 = (res.ci1, res.ci2) if m.variant.exponential else (res.ci1_dep, res.ci2_dep)
                row.update(EN1_sim=n1, EN2_sim=n2, ci1=c1, ci2=c2, p_busy_sim=res.p_busy,
                           ci_busy=res.ci_busy)
                ok &= abs(e1 - n1) <= c1 and abs(e2 - n2) <= c2 and not res.diverged
        except (ModelError, NumericalError) as exc:
            row["error"] = str(exc)
            ok = False
        row["pass"] = bool(ok)
        return row

    rows = _map(point, list(enumerate(args.xi_grid)), args.jobs)
    write_rows(args.out, VALIDATE_COLUMNS, rows)
    failed = [r["xi"] for r in rows if not r["pass"]]
    if failed:
        log.error("tolerance failed at xi = %s", failed)
        return EXIT_ACCEPT
    return EXIT_OK


def cmd_sweep(args) -> int:
    model, sim_block, digest = load_scenario(args.model)
    grid = args.grid
    man = RunManifest("sweep", args.model, args.out, args.order, args.pade, (), args.seed,
                      args.caps, args.engines, args.param, grid, digest)
    write_manifest(man)
    field = PARAMS[args.param]
    L, N = args.pade
    orders = args.orders or (args.order,)

    def point(item):
        i, value = item
        rows = []

        def fail(engine, exc):
            rows.append({"grid_value": value, "engine": engine, "error": f"{type(exc).__name__}: {exc}"})

        try:
            m = model.with_(**{field: float(value)})
        except ModelError as exc:
            fail("model", exc)
            return rows
        xi = m.xi
        base = m.with_xi(0.0)
        if {"psa", "pade"} & set(args.engines):
            try:
                stab = stability(m)
                if not stab.stable:
                    raise ModelError(f"unstable (rho = {stab.rho:.6g})")
                need = max(max(orders), L + N if "pade" in args.engines else 0)
                s1, s2 = _psa_series(base, need)
                pb = _busy(m)
                if "psa" in args.engines:
                    for M in orders:
                        rows.append({"grid_value": value, "engine": f"psa[M={M}]",
                                     "EN1": truncated_mean(s1, xi, M).value,
                                     "EN2": truncated_mean(s2, xi, M).value, "p_busy": pb})
                if "pade" in args.engines:
                    p1, p2 = pade_from_series(s1, L, N), pade_from_series(s2, L, N)
                    rows.append({"grid_value": value, "engine": f"pade[{L}/{N}]",
                                 "EN1": float(p1(xi)), "EN2": float(p2(xi)), "p_busy": pb,
                                 "error": "defective" if p1.defective or p2.defective else None})
            except (ModelError, NumericalError) as exc:
                fail("psa", exc)
        if "oracle" in args.engines and m.variant.exponential:
            try:
                sol = solve_ctmc(m, args.caps)
                rows.append({"grid_value": value, "engine": "oracle", "EN1": sol.EN1, "EN2": sol.EN2,
                             "p_busy": sol.p_busy,
                             "error": None if sol.trusted else f"boundary mass {sol.boundary_mass:.3g}"})
            except (ModelError, NumericalError) as exc:
                fail("oracle", exc)
        if "sim" in args.engines:
            res = simulate(m, _sim_config(args, sim_block, args.seed + i))
            rows.append({"grid_value": value, "engine": "sim", "EN1": res.EN1, "EN2": res.EN2,
                         "ci1": res.ci1, "ci2": res.ci2, "p_busy": res.p_busy,
                         "error": res.diagnostics.get("reason") if res.diverged else None})
        return rows

    per_point = _map(point, list(enumerate(grid)), args.jobs)
    write_rows(args.out, SWEEP_COLUMNS, [r for rows in per_point for r in rows])
    return EXIT_OK


# ---------------------------------------------------------------- entry


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="retrialpsa", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--model", required=True, help="scenario JSON file")
        sp.add_argument("--out", default=None, help="output .csv or .json (stdout CSV if omitted)")
        sp.add_argument("--order", type=int, default=8, help="series order M")
        sp.add_argument("--pade", type=_pair, default=(7, 2), metavar="L,N")
        sp.add_argument("--seed", type=int, default=12345)
        sp.add_argument("--caps", type=_pair, default=(300, 300), metavar="K1,K2")
        sp.add_argument("--jobs", type=int, default=1, help="worker threads over grid points")

    def sim_flags(sp):
        sp.add_argument("--events", type=int, default=None)
        sp.add_argument("--warmup", type=int, default=None)
        sp.add_argument("--replications", type=int, default=None)

    a = sub.add_parser("analyze", help="series, truncated and Padé means over a xi grid")
    common(a)
    a.add_argument("--xi-grid", type=parse_grid, default=parse_grid(DEFAULT_XI_GRID))
    a.set_defaults(func=cmd_analyze)

    v = sub.add_parser("validate", help="compare the series against the oracle and the simulator")
    common(v)
    sim_flags(v)
    v.add_argument("--xi-grid", type=parse_grid, default=parse_grid(DEFAULT_XI_GRID))
    v.add_argument("--engines", type=_engines, default=("psa", "oracle", "sim"))
    v.set_defaults(func=cmd_validate)

    s = sub.add_parser("sweep", help="metrics over a grid of one model parameter")
    common(s)
    sim_flags(s)
    s.add_argument("--param", choices=sorted(PARAMS), required=True)
    s.add_argument("--grid", type=parse_grid, required=True, help="a:b:step or comma list")
    s.add_argument("--orders", type=lambda t: tuple(int(x) for x in t.split(",")), default=None,
                   help="several truncation orders, e.g. 1,2,4,8")
    s.add_argument("--engines", type=_engines, default=("psa",))
    s.set_defaults(func=cmd_sweep, xi_grid=())
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ModelError as exc:
        log.error("model rejected: %s", exc)
        return EXIT_MODEL
    except NumericalError as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
