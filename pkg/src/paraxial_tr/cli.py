"""paraxial-tr: simulate | moments | compare | scaling | replay."""
from __future__ import annotations

import argparse
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .core import (ScalingConfig, ValidationError, apply_scintillation_scaling, config_from_dict,
                   config_to_dict, format_config, parse_config_text, scattering_mean_free_path, validate)
from .io import (MOMENT_HEADER, read_points, write_field, write_field_csv, write_json_atomic,
                 write_report, write_rows)
from .moments import (MomentParams, covariance_refocused, limit_mean_refocused, predict, predict_image,
                      shift_params)
from .montecarlo import (Channel, ComparisonReport, acceptance_channels, compare, run_ensemble_channels,
                         shifted_report)
from .propagator import realization_for
from .timereversal import ImageFunction, run_experiment

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_INVALID = 0, 1, 2, 3
MANIFEST = "manifest.json"


class UsageError(Exception):
    pass


def _pair(text: str) -> tuple[float, float]:
    try:
        a, b = (float(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'x,y', got {text!r}") from None
    return a, b


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="paraxial-tr", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("config", type=Path)
        if out:
            sp.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        sp.add_argument("--threads", type=_positive_int, default=None,
                        help="worker threads (fallback: PARAXIAL_TR_THREADS)")

    s = sub.add_parser("simulate", help="one realization (--n 1) or an ensemble mean")
    common(s)
    s.add_argument("--n", type=_positive_int, default=1)
    s.add_argument("--b", type=_pair, default=None, help="phase tilt 'bx,by'")
    s.add_argument("--image", type=Path, default=None, help="points file: b1, b2, weight")
    s.add_argument("--dump-fields", action="store_true", help="also write binary field dumps")
    s.add_argument("--realization", type=int, default=0, help="first realization index")

    m = sub.add_parser("moments", help="moment predictions, scans and summary")
    common(m)
    m.add_argument("--image", type=Path, default=None)
    m.add_argument("--scan", type=_positive_int, default=21, help="points per profile scan")

    c = sub.add_parser("compare", help="ensemble vs predictions; exit 1 on any failed criterion")
    common(c)
    c.add_argument("--n", type=_positive_int, default=None, help="realizations (default: config)")
    c.add_argument("--cache", type=Path, default=None, help="ensemble cache directory")
    c.add_argument("--main-only", action="store_true", help="skip shifted and image channels")

    k = sub.add_parser("scaling", help="emit the epsilon-rescaled config")
    common(k, out=False)
    k.add_argument("--epsilon", type=float, required=True)
    k.add_argument("--out", type=Path, default=None, help="file (default: stdout)")

    r = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    r.add_argument("manifest", type=Path)
    return p


# ------------------------------------------------------------------ helpers

def _load(path: Path):
    text = path.read_text()
    raw = parse_config_text(text)
    return raw, config_from_dict(raw)


def _derived(cfg) -> dict:
    p = MomentParams.from_config(cfg)
    L_sca = scattering_mean_free_path(cfg.medium, cfg.k0)
    d = {"r_0": p.r0, "L_sca": L_sca, "L_over_L_sca": cfg.L / L_sca if math.isfinite(L_sca) else 0.0,
         "R_tr": p.R_tr, "alpha_L": p.alpha_L}
    if cfg.medium.sigma > 0:
        sp = shift_params((0.0, 0.0), p)
        d.update(snr_closed_form=sp.snr_shifted, b_max=sp.b_max, R_max=sp.R_max)
    else:
        d.update(snr_closed_form=math.inf, b_max=0.0, R_max=0.0)
    return {k: (v if math.isfinite(v) else str(v)) for k, v in d.items()}


def _manifest(args, raw, cfg, outputs: list[str]) -> dict:
    argv = [a for a in sys.argv[1:]] if getattr(args, "_argv", None) is None else args._argv
    return {
        "tool": "paraxial-tr", "version": __version__, "command": args.command, "argv": argv,
        "config": format_config(raw), "resolved_config": config_to_dict(cfg),
        "seeds": {"master_seed": cfg.master_seed},
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "outputs": outputs, "derived": _derived(cfg),
    }


def _write_manifest(args, raw, cfg, outputs):
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "config.cfg").write_text(format_config(raw))
    write_json_atomic(args.out / MANIFEST, _manifest(args, raw, cfg, ["config.cfg"] + outputs))


def _image(path):
    if path is None:
        return None
    pts, w = read_points(path)
    return ImageFunction.from_points(pts, w)


# --------------------------------------------------------------- commands

def cmd_simulate(args) -> int:
    raw, cfg = _load(args.config)
    cfg = validate(replace(cfg, b=args.b if args.b is not None else cfg.b,
                           psi=_image(args.image) or cfg.psi))
    outs = ["field.csv"] + (["field.bin"] if args.dump_fields else [])
    if args.n > 1:
        outs += ["variance.csv"]
    _write_manifest(args, raw, cfg, outs)
    if args.n == 1:
        u = run_experiment(cfg, realization_for(cfg, args.realization)).u_tr.values
        print(f"realization {args.realization}: |u_tr(y)| = {abs(u[cfg.grid.index_of(cfg.y)]):.6g}")
    else:
        st, _ = run_ensemble_channels(cfg, args.n, [Channel("main", cfg.b, cfg.psi)], threads=args.threads,
                                      start=args.realization)
        st = st["main"]
        u = st.mean_field
        write_rows(args.out / "variance.csv", ["x1", "x2", "variance"],
                   ((float(cfg.grid.x[a]), float(cfg.y[1]), float(st.variance_field[a, cfg.grid.index_of(cfg.y)[1]]))
                    for a in range(cfg.grid.n)))
        pk = st.peak_fit
        msg = f"peak at ({pk.center[0]:.6g}, {pk.center[1]:.6g}) width {pk.width:.6g}" if pk.found else "no peak"
        print(f"ensemble of {st.n}: |mean(y)| = {abs(u[cfg.grid.index_of(cfg.y)]):.6g}, {msg}")
    write_field_csv(args.out / "field.csv", u, cfg.grid, cfg.y)
    if args.dump_fields:
        write_field(args.out / "field.bin", u, cfg.grid, cfg.delta_z)
    return EXIT_OK


def summary_text(cfg, pred) -> str:
    def f(v):
        return f"{v:.6g}" if math.isfinite(v) else "infinite"
    ratio = cfg.L / pred.L_sca if math.isfinite(pred.L_sca) else 0.0
    if cfg.medium.sigma == 0:
        snr = "infinite (no scattering)"
    else:
        snr = f"{pred.snr:.6g} (closed form {pred.snr_closed_form:.6g}, regime {pred.regime})"
    lines = [f"I_p     {f(pred.I_p)}", f"I_b     {f(pred.I_b)}", f"SNR     {snr}",
             f"R_tr    {f(pred.R_tr)}", f"alpha_L {f(pred.alpha_L)}", f"b_max   {f(pred.b_max)}",
             f"R_max   {f(pred.R_max)}", f"L_sca   {f(pred.L_sca)}", f"L/L_sca {f(ratio)}"]
    return "\n".join(lines) + "\n"


def cmd_moments(args) -> int:
    raw, cfg = _load(args.config)
    cfg = validate(cfg)
    psi = _image(args.image)
    _write_manifest(args, raw, cfg, ["moments.csv", "summary.txt"])
    p = MomentParams.from_config(cfg)
    pred = predict(p, y=cfg.y)
    R = p.R_tr if math.isfinite(p.R_tr) else math.sqrt(2) * p.L / (p.k0 * p.r0)
    t = np.linspace(-3 * R, 3 * R, args.scan)
    offs = np.column_stack([t, np.zeros_like(t)])
    rows = []
    mean, err = limit_mean_refocused(offs, cfg.y, p)
    rows += [("mean", o[0], o[1], 0.0, 0.0, v.real, v.imag, e) for o, v, e in zip(offs, mean, err)]
    if cfg.medium.sigma > 0:
        for h in np.linspace(0, 4 * R, (args.scan + 1) // 2):
            v, e = covariance_refocused((0.0, 0.0), (h, 0.0), cfg.y, p)
            rows.append(("covariance", 0.0, 0.0, float(h), 0.0, v.real, v.imag, e))
        for bb in np.linspace(0, pred.b_max, 6):
            sp = shift_params((bb, 0.0), p)
            rows.append(("shift_snr", sp.x_b[0], sp.x_b[1], float(bb), 0.0, sp.snr_shifted, 0.0, 0.0))
            rows.append(("shift_damping", sp.x_b[0], sp.x_b[1], float(bb), 0.0, sp.damping, 0.0, 0.0))
        if psi is not None:
            reach = p.alpha_L * psi.support_radius + 3 * p.R_tr
            ti = np.linspace(-reach, reach, args.scan)
            grid = np.array([(a, b) for a in ti for b in ti])
            img = predict_image(grid, psi, p)
            rows += [("image", o[0], o[1], 0.0, 0.0, v.real, v.imag, 0.0) for o, v in zip(grid, img)]
    write_rows(args.out / "moments.csv", MOMENT_HEADER,
               [(q, *map(float, rest)) for q, *rest in rows])
    text = summary_text(cfg, pred)
    (args.out / "summary.txt").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_compare(args) -> int:
    raw, cfg = _load(args.config)
    cfg = validate(cfg)
    n = args.n or cfg.n_realizations
    p = MomentParams.from_config(cfg)
    pred = predict(p, y=cfg.y)
    shifted = (not args.main_only and cfg.medium.sigma > 0 and pred.b_max > 0 and cfg.y == (0.0, 0.0)
               and cfg.b == (0.0, 0.0) and cfg.psi is None)
    channels = acceptance_channels(cfg, p) if shifted else [Channel("main", cfg.b, cfg.psi)]
    outs = ["report.csv", "report.txt"] + [f"mean_{c.name}.bin" for c in channels] + ["variance_main.bin"]
    _write_manifest(args, raw, cfg, outs)
    stats, _ = run_ensemble_channels(cfg, n, channels, threads=args.threads, cache_dir=args.cache)
    if cfg.medium.sigma == 0:
        rep = _compare_homogeneous(stats["main"], cfg, p)
    else:
        rep = compare(stats["main"], pred, p)
        if shifted:
            shifted_report(stats, p, rep)
    write_report(args.out / "report.csv", rep)
    for c in channels:
        write_field(args.out / f"mean_{c.name}.bin", stats[c.name].mean_field, cfg.grid, cfg.delta_z)
    write_field(args.out / "variance_main.bin", stats["main"].variance_field.astype(complex), cfg.grid,
                cfg.delta_z)
    text = rep.text() + "\n"
    (args.out / "report.txt").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK if rep.passed else EXIT_FAIL


def _compare_homogeneous(st, cfg, p) -> ComparisonReport:
    """Without scattering the finite-parameter mean field is exact."""
    from .moments import mean_field_M1
    rep = ComparisonReport()
    g = cfg.grid
    R = math.sqrt(2) * p.L / (p.k0 * p.r0)
    offs = np.array([(a * g.spacing, 0.0) for a in range(-int(3 * R / g.spacing), int(3 * R / g.spacing) + 1)])
    y = np.asarray(cfg.y)
    pts = offs + y
    m, _ = mean_field_M1((pts + y) / 2, pts - y, p, b=cfg.b)
    mc = np.array([st.mean_field[g.index_of(x)] for x in pts])
    err = float(np.max(np.abs(mc - m)) / np.max(np.abs(m)))
    rep.metric("homogeneous_mean_max_rel", err, 1e-6, err <= 1e-6)
    vmax = float(st.variance_field.max())
    rep.metric("variance_max", vmax, 1e-20, vmax <= 1e-20)
    return rep


def cmd_scaling(args) -> int:
    raw, cfg = _load(args.config)
    scaled = apply_scintillation_scaling(cfg, ScalingConfig(args.epsilon))
    full = config_to_dict(scaled)
    text = format_config({k: full[k] for k in raw})
    if args.out is None:
        sys.stdout.write(text)
    else:
        args.out.write_text(text)
    return EXIT_OK


def cmd_replay(args) -> int:
    import json
    man = json.loads(args.manifest.read_text())
    base = args.manifest.parent
    cfg_path = base / "config.cfg"
    cfg_path.write_text(man["config"])
    argv = list(man["argv"])
    # config path and --out point at the manifest directory
    ns = build_parser().parse_args(argv)
    argv[argv.index(str(ns.config))] = str(cfg_path)
    if "--out" in argv:
        argv[argv.index("--out") + 1] = str(base)
    else:
        argv += ["--out", str(base)]
    return main(argv)


COMMANDS = {"simulate": cmd_simulate, "moments": cmd_moments, "compare": cmd_compare,
            "scaling": cmd_scaling, "replay": cmd_replay}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    args._argv = argv
    try:
        return COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"paraxial-tr: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, ValueError) as exc:
        print(f"paraxial-tr: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
