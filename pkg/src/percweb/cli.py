"""Command line: run experiments, write results, manifests and plot data."""
from __future__ import annotations

import argparse
import csv
import datetime as dt
import hashlib
import io
import json
import logging
import sys
from importlib import metadata
from pathlib import Path

from .errors import CapacityExceeded, ConfigInvalid, PercwebError, RejectionBudgetExceeded, SchemaMismatch
from .stats.core import SCHEMA_VERSION, ExperimentConfig, ExperimentResult
from .stats.engine import default_threads
from .stats.registry import EXPERIMENTS, run as run_experiment

log = logging.getLogger("percweb")

TOP_KEYS = ("seed", "p", "replicates", "margin", "threads")
EXIT_OK, EXIT_ERROR, EXIT_ASSERT = 0, 1, 2


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def _floats(s: str) -> list[float]:
    return [float(v) for v in s.split(",") if v.strip()]


def _ints(s: str) -> list[int]:
    return [int(float(v)) for v in s.split(",") if v.strip()]


def load_config(path: str | None, subcommand: str) -> dict:
    """Flat JSON; keys may be prefixed by 'params.' or '<subcommand>.'."""
    if not path:
        return {}
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigInvalid(f"cannot read config {path}: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigInvalid("config must be a JSON object")
    out = {}
    for k, v in raw.items():
        for pre in ("params.", f"{subcommand}."):
            if k.startswith(pre):
                k = k[len(pre):]
        if "." in k:
            continue                   # another subcommand's key
        out[k] = v
    return out


def build_config(args) -> ExperimentConfig:
    flat = load_config(args.config, args.subcommand)
    flags = {"seed": args.seed, "p": args.p, "replicates": args.replicates, "margin": args.margin,
             "threads": args.threads, "n_grid": args.n_grid, "separations": args.sep,
             "delta_grid": args.delta_grid, "u_grid": args.u, "t_grid": args.t, "a": args.a,
             "b": args.b, "c1": args.c1}
    for k, v in flags.items():
        if v is not None:
            flat[k] = v
    top = {k: flat.pop(k) for k in TOP_KEYS if k in flat}
    top.setdefault("replicates", EXPERIMENTS[args.subcommand].replicates)
    top.setdefault("threads", default_threads())
    try:
        return ExperimentConfig(args.subcommand, params=flat, **top)
    except TypeError as e:
        raise ConfigInvalid(str(e)) from e


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _run_dir(out: Path, sub: str, stamp: str) -> Path:
    base = out / sub / stamp
    d, k = base, 1
    while d.exists():
        d = base.with_name(f"{stamp}-{k}")
        k += 1
    d.mkdir(parents=True)
    return d


def write_outputs(res: ExperimentResult, out: Path, started: dt.datetime) -> Path:
    d = _run_dir(out, res.tag, started.strftime("%Y%m%dT%H%M%S%fZ"))
    files = {}
    (d / "result.json").write_text(res.to_json() + "\n")
    files["result.json"] = d / "result.json"
    for name, tab in res.tables.items():
        p = d / f"{name}.csv"
        p.write_text(tab.to_csv())
        files[p.name] = p
    ended = dt.datetime.now(dt.timezone.utc)
    manifest = {
        "tool": "percweb", "version": _version(), "schema_version": SCHEMA_VERSION,
        "config": res.config, "master_seed": res.config.get("seed"),
        "started": started.isoformat(), "ended": ended.isoformat(),
        "outputs": {k: {"path": p.name, "sha256": _sha256(p)} for k, p in sorted(files.items())},
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return d


def verify_manifest(run_dir) -> bool:
    d = Path(run_dir)
    m = json.loads((d / "manifest.json").read_text())
    return all(_sha256(d / e["path"]) == e["sha256"] for e in m["outputs"].values())


# -- plot data ---------------------------------------------------------------------

PLOT_COLUMNS = ["experiment", "series", "x", "y", "y_err"]


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def plot_rows(d: dict) -> list[list]:
    if not isinstance(d, dict) or d.get("schema_version") != SCHEMA_VERSION:
        raise SchemaMismatch(f"expected schema_version {SCHEMA_VERSION}, got {d.get('schema_version') if isinstance(d, dict) else None}")
    try:
        exp = d["experiment"]
        tables = d["tables"]
    except KeyError as e:
        raise SchemaMismatch(f"result lacks {e}") from e
    rows = []
    for name, t in tables.items():
        plot = t.get("plot")
        if not plot:
            continue
        cols = t["columns"]
        need = [plot.get("x"), plot.get("y")] + [c for c in (plot.get("y_err"), plot.get("series")) if c]
        missing = [c for c in need if c not in cols]
        if missing:
            raise SchemaMismatch(f"table {name} lacks plotted columns {missing}")
        ix, iy = cols.index(plot["x"]), cols.index(plot["y"])
        ie = cols.index(plot["y_err"]) if plot.get("y_err") else None
        is_ = cols.index(plot["series"]) if plot.get("series") else None
        for r in t["rows"]:
            series = name if is_ is None else f"{name}:{r[is_]}"
            rows.append([exp, series, r[ix], r[iy], None if ie is None else r[ie]])
    return rows


def emit_plotdata(result_path, out_path=None) -> str:
    """Long-format CSV (experiment, series, x, y, y_err) from a result JSON."""
    try:
        d = json.loads(Path(result_path).read_text())
    except json.JSONDecodeError as e:
        raise SchemaMismatch(f"not a result file: {e}") from e
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PLOT_COLUMNS)
    for r in plot_rows(d):
        w.writerow([_cell(v) for v in r])
    text = buf.getvalue()
    if out_path is not None:
        Path(out_path).write_text(text)
    return text


# -- entry point ---------------------------------------------------------------------

def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="percweb", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one experiment")
    r.add_argument("subcommand", choices=sorted(EXPERIMENTS))
    r.add_argument("--config", help="flat JSON config")
    r.add_argument("--seed", type=int)
    r.add_argument("--p", type=float)
    r.add_argument("--threads", type=int)
    r.add_argument("--replicates", type=int)
    r.add_argument("--margin", type=int)
    r.add_argument("--out", default="runs")
    r.add_argument("--assert", dest="check", action="store_true",
                   help="exit 2 if any acceptance check fails")
    r.add_argument("--n-grid", type=_ints)
    r.add_argument("--sep", type=_ints)
    r.add_argument("--delta-grid", type=_floats)
    r.add_argument("--u", type=_floats)
    r.add_argument("--t", type=_floats)
    r.add_argument("--a", type=float)
    r.add_argument("--b", type=float)
    r.add_argument("--c1", type=_floats)
    pl = sub.add_parser("plotdata", help="tidy CSV from a result.json")
    pl.add_argument("result")
    pl.add_argument("--out")
    sub.add_parser("list", help="list experiments")
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "list":
            for name in sorted(EXPERIMENTS):
                print(name)
            return EXIT_OK
        if args.command == "plotdata":
            text = emit_plotdata(args.result, args.out)
            if args.out is None:
                sys.stdout.write(text)
            return EXIT_OK
        cfg = build_config(args)
        started = dt.datetime.now(dt.timezone.utc)
        log.info("running %s with seed %d", cfg.tag, cfg.seed)
        res = run_experiment(cfg)
        d = write_outputs(res, Path(args.out), started)
        for c in res.checks:
            print(c.line())
        print(f"wrote {d}")
        if args.check and not res.passed:
            return EXIT_ASSERT
        return EXIT_OK
    except ConfigInvalid as e:
        print(f"error: invalid configuration: {e}", file=sys.stderr)
    except CapacityExceeded as e:
        print(f"error: capacity exceeded: {e}", file=sys.stderr)
    except RejectionBudgetExceeded as e:
        print(f"error: rejection budget exceeded: {e}", file=sys.stderr)
    except SchemaMismatch as e:
        print(f"error: schema mismatch: {e}", file=sys.stderr)
    except PercwebError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
