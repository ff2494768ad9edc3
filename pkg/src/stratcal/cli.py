"""Command-line front end.

Exit codes: 0 success, 2 bad input, 3 diagnostics gate failed (outputs are
still written), 4 infeasible model.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .calcurve import CalibrationCurve, parse_curve
from .diagnostics import ESS_MIN, RHAT_MAX, diagnose
from .errors import CurveError, InfeasibleModel, ModelError
from .inference import SamplerConfig, run_sampler
from .model import ChronModel, parse_model
from .summary import DensityGrid, calibrate_independent, hpd, marginal_density

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_GATE = 3
EXIT_INFEASIBLE = 4

CURVE_DIR_ENV = "STRATCAL_CURVE_DIR"
HPD_LEVELS = (0.68, 0.95)


class InputError(Exception):
    pass


def _positive(kind):
    def parse(text):
        try:
            v = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
        return v
    return parse


def _nonneg_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return v


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def resolve_curve(source: str) -> tuple[CalibrationCurve, bytes]:
    """Curve and its raw bytes from a path, a name in $STRATCAL_CURVE_DIR, or a built-in."""
    candidates = [Path(source)]
    curve_dir = os.environ.get(CURVE_DIR_ENV)
    if curve_dir:
        candidates += [Path(curve_dir) / source, Path(curve_dir) / f"{source}.14c"]
    for path in candidates:
        if path.is_file():
            raw = path.read_bytes()
            break
    else:
        res = resources.files("stratcal") / "data" / f"{source}.14c"
        if not res.is_file():
            raise InputError(f"curve {source!r} not found as a file, in ${CURVE_DIR_ENV}, "
                             "or among built-in curves")
        raw = res.read_bytes()
        path = Path(source)
    try:
        curve = parse_curve(raw.decode("utf-8", errors="replace"), name=path.stem)
    except CurveError as exc:
        raise InputError(f"curve {source}: {exc}") from None
    return curve, raw


def _read_model(path: str) -> tuple[ChronModel, bytes]:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"model file {path!r} not found")
    raw = p.read_bytes()
    try:
        return parse_model(raw), raw
    except ModelError as exc:
        raise InputError(f"model {path}: {exc}") from None


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _dump(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _fmt_intervals(res) -> str:
    return ", ".join(f"{lo:g}-{hi:g}" for lo, hi in res.intervals)


# --------------------------------------------------------------------------
# calibrate


def cmd_calibrate(args) -> int:
    curve, _ = resolve_curve(args.curve)
    lo, hi = curve.domain
    try:
        grid = calibrate_independent(args.x, args.sigma, curve, grid_step=args.step)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    out = Path(args.out)
    stem = args.label or f"c14_{args.x:g}_{args.sigma:g}"
    _write(out / f"{stem}.csv", grid.to_csv())
    results = {f"{p:g}": hpd(grid, p).to_json() for p in HPD_LEVELS}
    _write(out / f"{stem}_hpd.json", _dump({"x": args.x, "sigma": args.sigma,
                                             "curve": curve.name, "step": args.step,
                                             "hpd": results}))
    print(f"{args.x:g} +/- {args.sigma:g} BP on {curve.name} (grid step {args.step:g} yr)")
    for p in HPD_LEVELS:
        print(f"  {p:.0%} HPD: {_fmt_intervals(hpd(grid, p))} cal BP")
    print(f"wrote {out / (stem + '.csv')} and {out / (stem + '_hpd.json')}")
    return EXIT_OK


# --------------------------------------------------------------------------
# run / replay


def _config_from_args(args) -> SamplerConfig:
    try:
        return SamplerConfig(iterations=args.iterations, burn_in=args.burn_in, thin=args.thin,
                             chains=args.chains, seed=args.seed, proposal_sd=args.proposal_sd,
                             adapt=not args.no_adapt, wide_prob=args.wide_prob,
                             wide_factor=args.wide_factor)
    except (TypeError, ValueError) as exc:
        raise InputError(str(exc)) from None


def _execute(model_path: str, curve_src: str, config: SamplerConfig, out_dir: Path,
             step: float, rhat_max: float, ess_min: float, gate: bool, workers: int) -> int:
    started = _dt.datetime.now(_dt.timezone.utc)
    model, model_raw = _read_model(model_path)
    curve, curve_raw = resolve_curve(curve_src)
    manifest = {
        "tool": "stratcal",
        "version": __version__,
        "model": {"path": model_path, "sha256": _sha256(model_raw)},
        "curve": {"source": curve_src, "name": curve.name, "sha256": _sha256(curve_raw)},
        "config": config.to_dict(),
        "summary": {"grid_step": step, "hpd_levels": list(HPD_LEVELS)},
        "gate": {"enabled": gate, "r_hat_max": rhat_max, "ess_min": ess_min},
    }
    _write(out_dir / "manifest.json", _dump(manifest))

    try:
        outputs = run_sampler(model, curve, config, workers=workers)
    except InfeasibleModel as exc:
        print(f"error: infeasible model: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE

    for o in outputs:
        _write(out_dir / "chains" / f"chain_{o.chain_id}.csv", o.to_csv())
        _write(out_dir / "chains" / f"chain_{o.chain_id}.json", _dump(o.to_json()))

    report = diagnose(outputs, rhat_max=rhat_max, ess_min=ess_min)
    _write(out_dir / "diagnostics.json", report.dumps())
    _write(out_dir / "diagnostics.txt", report.to_table())

    summary_lines = []
    for p, lab in enumerate(model.labels):
        draws = [o.samples[:, p] for o in outputs]
        x = np.concatenate(draws)
        if x.size < 100:
            continue
        grid = marginal_density(x, step)
        safe = lab.replace("=", "__")
        _write(out_dir / "marginals" / f"{safe}.csv", grid.to_csv())
        res = {f"{q:g}": hpd(grid, q).to_json() for q in HPD_LEVELS}
        _write(out_dir / "hpd" / f"{safe}.json",
               _dump({"parameter": lab, "mean": float(x.mean()), "sd": float(x.std()),
                      "hpd": res}))
        summary_lines.append(f"  {lab:<14} mean {x.mean():8.1f}  sd {x.std():6.1f}  "
                             f"95% HPD {_fmt_intervals(hpd(grid, 0.95))}")

    finished = _dt.datetime.now(_dt.timezone.utc)
    _write(out_dir / "run_log.json", _dump({
        "started": started.isoformat(),
        "finished": finished.isoformat(),
        "chain_wall_time": {o.chain_id: o.wall_time for o in outputs},
    }))

    print(report.to_table(), end="")
    print("posterior summaries (cal BP):")
    print("\n".join(summary_lines))
    print(f"outputs in {out_dir}")
    if not report.passed:
        for msg in report.failures():
            print(f"diagnostics: {msg}", file=sys.stderr)
        if gate:
            print("diagnostics gate failed (rerun longer, or pass --no-gate)", file=sys.stderr)
            return EXIT_GATE
    return EXIT_OK


def cmd_run(args) -> int:
    config = _config_from_args(args)
    return _execute(args.model, args.curve, config, Path(args.out_dir), args.step,
                    args.rhat_max, args.ess_min, not args.no_gate, args.workers)


def cmd_replay(args) -> int:
    path = Path(args.manifest)
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
        config = SamplerConfig(**manifest["config"])
        model_path = manifest["model"]["path"]
        curve_src = manifest["curve"]["source"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise InputError(f"unreadable manifest {path}: {exc}") from None
    _, model_raw = _read_model(model_path)
    _, curve_raw = resolve_curve(curve_src)
    if _sha256(model_raw) != manifest["model"]["sha256"]:
        raise InputError(f"model file {model_path} has changed since the recorded run")
    if _sha256(curve_raw) != manifest["curve"]["sha256"]:
        raise InputError(f"curve {curve_src} has changed since the recorded run")
    gate = manifest.get("gate", {})
    summ = manifest.get("summary", {})
    return _execute(model_path, curve_src, config, Path(args.out_dir),
                    summ.get("grid_step", 1.0), gate.get("r_hat_max", RHAT_MAX),
                    gate.get("ess_min", ESS_MIN), gate.get("enabled", True) and not args.no_gate,
                    args.workers)


# --------------------------------------------------------------------------
# plot


def cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    grids = []
    for p in args.density:
        try:
            grids.append(DensityGrid.from_csv(Path(p).read_text(encoding="utf-8")))
        except OSError as exc:
            raise InputError(f"{p}: {exc.strerror}") from None
        except ValueError as exc:
            raise InputError(f"{p}: {exc}") from None
    labels = args.labels or [Path(p).stem for p in args.density]
    if len(labels) != len(grids):
        raise InputError("--labels must give one label per density file")

    plt.rcParams["svg.hashsalt"] = "stratcal"
    fig, ax = plt.subplots(figsize=(7, 3))
    for grid, lab in zip(grids, labels):
        ax.step(grid.theta, grid.density, where="mid", linewidth=1.2, label=lab)
    ax.invert_xaxis()
    ax.set_xlabel("cal BP")
    ax.set_ylabel("probability density")
    ax.set_yticks([])
    if args.title:
        ax.set_title(args.title)
    if len(grids) > 1 or args.labels:
        ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, format="svg", metadata={"Date": None})
    plt.close(fig)
    print(f"wrote {out}")
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stratcal", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"stratcal {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="calibrate one determination")
    p.add_argument("--x", type=float, required=True, help="radiocarbon age, BP")
    p.add_argument("--sigma", type=_positive(float), required=True, help="lab error, BP")
    p.add_argument("--curve", default="intcal13", help="curve file or built-in name")
    p.add_argument("--step", type=_positive(float), default=1.0, help="grid step, cal yr")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--label", help="file stem for outputs")
    p.set_defaults(func=cmd_calibrate)

    d = SamplerConfig()
    p = sub.add_parser("run", help="sample a chronological model")
    p.add_argument("--model", required=True, help="model JSON file")
    p.add_argument("--curve", default="intcal13", help="curve file or built-in name")
    p.add_argument("--iterations", type=_positive(int), default=d.iterations)
    p.add_argument("--burn-in", type=_nonneg_int, default=d.burn_in)
    p.add_argument("--thin", type=_positive(int), default=d.thin)
    p.add_argument("--chains", type=_positive(int), default=d.chains)
    p.add_argument("--seed", type=_nonneg_int, default=d.seed)
    p.add_argument("--proposal-sd", type=_positive(float), default=d.proposal_sd)
    p.add_argument("--no-adapt", action="store_true", help="keep proposal_sd fixed")
    p.add_argument("--wide-prob", type=float, default=d.wide_prob)
    p.add_argument("--wide-factor", type=float, default=d.wide_factor)
    p.add_argument("--step", type=_positive(float), default=1.0, help="summary grid step")
    p.add_argument("--rhat-max", type=_positive(float), default=RHAT_MAX)
    p.add_argument("--ess-min", type=float, default=ESS_MIN)
    p.add_argument("--no-gate", action="store_true", help="exit 0 even if diagnostics fail")
    p.add_argument("--workers", type=_positive(int), default=1, help="parallel chain processes")
    p.add_argument("--out-dir", default="stratcal_run")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("replay", help="rerun from a manifest.json")
    p.add_argument("manifest")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-gate", action="store_true")
    p.add_argument("--workers", type=_positive(int), default=1)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("plot", help="overlay density CSVs as an SVG outline plot")
    p.add_argument("--density", nargs="+", required=True, help="theta,density CSV files")
    p.add_argument("--out", required=True, help="output SVG path")
    p.add_argument("--labels", nargs="+")
    p.add_argument("--title")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
