"""``scalelab de|estimate|predict|simulate|fp``.

Exit codes: 0 success, 2 configuration error, 3 estimation failure.
Settings come from ``--config`` (``key = value`` lines) and flag overrides.
"""

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import config as cfgmod
from . import de, laws, montecarlo, params, race
from .decoders import UNLIMITED, WindowConfig
from .graph import EnsembleSpec, SpecError, parse_termination
from .table import RangeError, SchemaError, ScalingParams

log = logging.getLogger("scalelab")

EXIT_CONFIG = 2
EXIT_ESTIMATION = 3
DEFAULT_GRID = "0.44:0.49:0.005"
FULL_BP_MODELS = ("unlimited", "constant_propagation", "iterative_ou", "gaussian", "shifted_gaussian")


def default_params_path():
    return Path(__file__).parent / "data" / "params_5_10_50.json"


def _common(p):
    p.add_argument("--config", help="key = value settings file")
    p.add_argument("--dv", type=int)
    p.add_argument("--dc", type=int)
    p.add_argument("-L", "--L", dest="L", type=int)
    p.add_argument("-N", "--N", dest="N", type=int)
    p.add_argument("--eps-grid", dest="eps_grid", help="a:b:step (inclusive) or a comma list")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--params", help="params.json path")
    p.add_argument("-v", "--verbose", action="store_true")


def _window_flags(p):
    p.add_argument("--W", type=int)
    p.add_argument("--I-in", dest="I_in", type=int)
    p.add_argument("--I-s", dest="I_s", type=int)


def build_parser():
    ap = argparse.ArgumentParser(prog="scalelab", description="Finite-length scaling laws for SC-LDPC codes on the BEC.")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("de", help="threshold and density-evolution phase table")
    _common(p)

    p = sub.add_parser("estimate", help="estimate every scaling parameter into params.json")
    _common(p)
    p.add_argument("--only", help=f"comma list of stages: {','.join(params.STAGES)}")
    p.add_argument("--trials", type=int)

    p = sub.add_parser("predict", help="predicted FER curves as CSV")
    _common(p)
    p.add_argument("--I", dest="I", help="iteration budget(s), comma list; omit for unlimited")
    p.add_argument("--models", help="comma list or 'all'")
    p.add_argument("--decoder", choices=("full_bp", "sliding_window"))
    _window_flags(p)
    p.add_argument("--out", help="CSV path (default: stdout)")

    p = sub.add_parser("simulate", help="Monte-Carlo FER with Wilson intervals as CSV")
    _common(p)
    p.add_argument("--termination")
    p.add_argument("--I", dest="I", help="iteration budget(s), comma list; omit for unlimited")
    p.add_argument("--decoder", choices=("full_bp", "sliding_window"))
    _window_flags(p)
    p.add_argument("--frames", type=int)
    p.add_argument("--max-frame-errors", dest="max_frame_errors", type=int)
    p.add_argument("--fixed-graph", dest="fixed_graph", action="store_const", const="true")
    p.add_argument("--cache-dir", dest="cache_dir")
    p.add_argument("--out", help="CSV path (default: stdout)")

    p = sub.add_parser("fp", help="overtaking probability and sliding-window FER as JSON")
    _common(p)
    _window_flags(p)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--em-paths", dest="em_paths", type=int, help="also run the SDE oracle")
    p.add_argument("--mass-history", dest="mass_history", action="store_const", const="true")
    p.add_argument("--out", help="JSON path (default: stdout)")
    return ap


def _values(args):
    file_vals = cfgmod.load(args.config) if args.config else {}
    over = {k: v for k, v in vars(args).items() if k not in ("config", "cmd", "verbose")}
    return cfgmod.merged(file_vals, over)


def _spec(v, default_term="terminated"):
    g = cfgmod.get
    term = parse_termination(g(v, "termination", str, default_term))
    return EnsembleSpec(g(v, "dv", int, 5), g(v, "dc", int, 10), g(v, "L", int, 50), g(v, "N", int, 1000), term)


def _load_params(v):
    path = cfgmod.get(v, "params", str, None) or default_params_path()
    try:
        return ScalingParams.load(path)
    except FileNotFoundError as e:
        raise cfgmod.ConfigError(f"params file {path} not found") from e


def _open_out(path):
    return open(path, "w", newline="") if path else sys.stdout


def _window_cfg(v):
    g = cfgmod.get
    return WindowConfig(g(v, "W", int, required=True), g(v, "I_in", int, required=True), g(v, "I_s", int, required=True))


def cmd_de(v):
    g = cfgmod.get
    grid = cfgmod.parse_grid(g(v, "eps_grid", str, DEFAULT_GRID))
    out = Path(g(v, "params", str, "params.json"))
    existing = ScalingParams.load(out) if out.exists() else None
    P = params.build_params(g(v, "dv", int, 5), g(v, "dc", int, 10), g(v, "L", int, 50), grid,
                            stages=["de"], existing=existing)
    P.save(out)
    print(f"epsilon_star={P.scalar('epsilon_star'):.5f} knots={len(grid)} -> {out}")
    return 0


def cmd_estimate(v):
    g = cfgmod.get
    grid = cfgmod.parse_grid(g(v, "eps_grid", str, DEFAULT_GRID))
    out = Path(g(v, "params", str, "params.json"))
    existing = ScalingParams.load(out) if out.exists() else None
    ec = params.EstimateConfig(
        seed=g(v, "seed", int, 0), workers=g(v, "workers", int, 1), trials=g(v, "trials", int, 200),
    )
    only = [s.strip() for s in g(v, "only", str, "").split(",") if s.strip()] or None
    P = params.build_params(g(v, "dv", int, 5), g(v, "dc", int, 10), g(v, "L", int, 50), grid, ec,
                            stages=only, existing=existing)
    P.save(out)
    print(f"wrote {out}")
    return 0


def _budgets(v):
    text = cfgmod.get(v, "I", str, None)
    return cfgmod.parse_ints(text) if text else ()


def cmd_predict(v):
    g = cfgmod.get
    P = _load_params(v)
    grid = cfgmod.parse_grid(g(v, "eps_grid", str, DEFAULT_GRID))
    N = g(v, "N", int, 1000)
    decoder = g(v, "decoder", str, "full_bp")
    rows = []
    if decoder == "sliding_window":
        wc = _window_cfg(v)
        L = g(v, "L", int, P.L)
        for e in grid:
            if not P.covers(e):
                log.warning("epsilon=%.4f outside the params table; skipped", e)
                continue
            rows.append((e, "sliding_window", race.fer_sliding_window_limited(P, e, N, L, wc)))
    else:
        text = g(v, "models", str, "all")
        models = FULL_BP_MODELS if text == "all" else tuple(m.strip() for m in text.split(","))
        bad = set(models) - set(FULL_BP_MODELS)
        if bad:
            raise cfgmod.ConfigError(f"unknown models {sorted(bad)}")
        budgets = _budgets(v)
        if not budgets and set(models) - {"unlimited"}:
            raise cfgmod.ConfigError("limited-iteration models need --I")
        for I in budgets or (None,):
            for e in grid:
                if not P.covers(e):
                    log.warning("epsilon=%.4f outside the params table; skipped", e)
                    continue
                for m in models:
                    if m == "unlimited":
                        fer = laws.fer_unlimited(P, e, N)
                    else:
                        fer = laws.predict(P, e, N, I, m, seed=g(v, "seed", int, 0))
                    rows.append((e, m if I is None or len(budgets) < 2 else f"{m}@I={I}", fer))
    fh = _open_out(g(v, "out", str, None))
    w = csv.writer(fh)
    w.writerow(["epsilon", "model", "fer"])
    for e, m, f in rows:
        w.writerow([f"{e:.6g}", m, f"{f:.6g}"])
    if fh is not sys.stdout:
        fh.close()
    return 0


def cmd_simulate(v):
    g = cfgmod.get
    spec = _spec(v)
    grid = cfgmod.parse_grid(g(v, "eps_grid", str, DEFAULT_GRID))
    if g(v, "decoder", str, "full_bp") == "sliding_window":
        dec = montecarlo.SlidingWindow(_window_cfg(v))
    else:
        dec = montecarlo.FullBP(_budgets(v) or (UNLIMITED,))
    sc = montecarlo.SimConfig(
        spec, grid, dec, g(v, "frames", int, 1000), g(v, "max_frame_errors", int, None),
        g(v, "seed", int, 0), g(v, "workers", int, 1), g(v, "fixed_graph", bool, False),
    )
    res = montecarlo.simulate(sc, g(v, "cache_dir", str, None))
    out = g(v, "out", str, None)
    if out:
        montecarlo.write_csv(res, out, dec.label)
    else:
        w = csv.writer(sys.stdout)
        w.writerow(["epsilon", "decoder", "I", "frames", "errors", "fer", "ci_low", "ci_high"])
        for p in res.points:
            w.writerow([p.epsilon, dec.label, "" if p.budget == UNLIMITED else p.budget,
                        p.frames, p.errors, p.fer, p.ci_low, p.ci_high])
    return 0


def cmd_fp(v):
    g = cfgmod.get
    P = _load_params(v)
    eps = g(v, "epsilon", float, required=True)
    if not P.covers(eps):
        raise cfgmod.ConfigError(f"epsilon={eps} outside the params table")
    wc = _window_cfg(v)
    N, L = g(v, "N", int, 1000), g(v, "L", int, P.L)
    pred = race.predict_window(P, eps, N, L, wc)
    text = pred.to_json(with_history=g(v, "mass_history", bool, False))
    paths = g(v, "em_paths", int, None)
    if paths:
        import json

        doc = json.loads(text)
        prob = race.build_problem(P, eps, N, L, wc)
        doc["pr_overtake_em"] = race.em_simulate(prob, paths, 0.1, seed=g(v, "seed", int, 0))
        text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    out = g(v, "out", str, None)
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


COMMANDS = {"de": cmd_de, "estimate": cmd_estimate, "predict": cmd_predict, "simulate": cmd_simulate, "fp": cmd_fp}


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.cmd](_values(args))
    except (cfgmod.ConfigError, SpecError, SchemaError, RangeError) as e:
        log.error("%s", e)
        return EXIT_CONFIG
    except (params.EstimationError, de.SearchError, de.DomainError) as e:
        log.error("estimation failed: %s", e)
        return EXIT_ESTIMATION


if __name__ == "__main__":
    sys.exit(main())
