"""Command-line interface: rate, sweep, optimize, verify, baseline.

Configuration is a flat key=value text file overridden by flags; two detector
presets bundle the standard constants.  All outputs are plain text or CSV and
are byte-reproducible from (config, seed).
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass

import numpy as np

from .channel import ChannelParams
from .expectations import QuadratureSpec
from .keyrate import (ProtocolConfig, active_rate, optimize_rate, passive_rate)
from .montecarlo import compare_to_analytic, simulate_trials
from .regions import RegionParams
from .source import SourceParams


class ConfigError(ValueError):
    pass


PRESETS = {
    "snspd": {"p_d": 1e-8, "eta_d": 0.70},
    "spad": {"p_d": 1e-6, "eta_d": 0.30},
}

DEFAULTS = {
    "mu_max": 0.5,
    "eta_f": 1.0,
    "delta_z": 0.15,
    "delta_x": 0.15,
    "delta_phi": 0.3,
    "t1": 0.6,
    "t2": 0.2,
    "p_d": 1e-8,
    "e_d": 0.01,
    "eta_d": 0.70,
    "alpha_db_km": 0.2,
    "distance_km": 0.0,
    "f_e": 1.16,
    "n_cut": 6,
    "m_cut": 6,
    "include_shaping_loss": True,
    "quad_radial": 32,
    "quad_angular": 32,
    "quad_phase": 32,
    "trials": 1_000_000,
    "seed": 1,
    "distances": "0:100:25",
    "active_mu_signal": 0.5,
    "active_mu_decoy": 0.1,
    "active_mu_vacuum": 0.0,
}

_BOOL_KEYS = {"include_shaping_loss"}
_INT_KEYS = {"n_cut", "m_cut", "quad_radial", "quad_angular", "quad_phase",
             "trials", "seed"}
_STR_KEYS = {"distances"}


@dataclass
class RunConfig:
    values: dict

    def protocol_config(self, distance_km: float | None = None) -> ProtocolConfig:
        v = self.values
        dist = v["distance_km"] if distance_km is None else distance_km
        try:
            return ProtocolConfig(
                source=SourceParams.from_mu_max(v["mu_max"], v["eta_f"]),
                regions=RegionParams(delta_z=v["delta_z"], delta_x=v["delta_x"],
                                     delta_phi=v["delta_phi"], t1=v["t1"],
                                     t2=v["t2"]),
                channel=ChannelParams(p_d=v["p_d"], e_d=v["e_d"],
                                      eta_d=v["eta_d"],
                                      alpha_db_km=v["alpha_db_km"],
                                      l_a=dist, l_b=dist),
                f_e=v["f_e"], n_cut=v["n_cut"], m_cut=v["m_cut"],
                include_shaping_loss=v["include_shaping_loss"],
                quad=QuadratureSpec(v["quad_radial"], v["quad_angular"],
                                    v["quad_phase"]),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def active_intensities(self) -> tuple[float, float, float]:
        v = self.values
        return (v["active_mu_signal"], v["active_mu_decoy"],
                v["active_mu_vacuum"])


def _coerce(key: str, raw: str):
    if key in _STR_KEYS:
        return raw
    if key in _BOOL_KEYS:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"invalid boolean for {key}: {raw!r}")
    try:
        if key in _INT_KEYS:
            return int(raw)
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"invalid value for {key}: {raw!r}") from exc


def parse_config_file(path: str) -> dict:
    out = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                stripped = line.split("#", 1)[0].strip()
                if not stripped:
                    continue
                if "=" not in stripped:
                    raise ConfigError(f"{path}:{lineno}: expected key=value")
                key, raw = (part.strip() for part in stripped.split("=", 1))
                if key not in DEFAULTS:
                    raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
                out[key] = _coerce(key, raw)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return out


def parse_distances(spec: str) -> list[float]:
    """Distance list from 'a:b:step' (inclusive ends) or comma-separated values."""
    spec = spec.strip()
    if not spec:
        return []
    try:
        if ":" in spec:
            a, b, step = (float(p) for p in spec.split(":"))
            if step <= 0 or b < a:
                raise ValueError
            out = []
            x = a
            while x <= b + 1e-9:
                out.append(round(x, 9))
                x += step
            return out
        return [float(p) for p in spec.split(",") if p.strip()]
    except ValueError as exc:
        raise ConfigError(f"invalid distances spec {spec!r}") from exc


def load_run_config(args) -> RunConfig:
    values = dict(DEFAULTS)
    if args.config:
        values.update(parse_config_file(args.config))
    if args.preset:
        if args.preset not in PRESETS:
            raise ConfigError(f"unknown preset {args.preset!r}")
        values.update(PRESETS[args.preset])
    for key in ("trials", "seed"):
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    if getattr(args, "distances", None) is not None:
        values["distances"] = args.distances
    return RunConfig(values=values)


def _fmt(x: float) -> str:
    return f"{x:.12e}"


def _emit(lines: list[str], out_path: str | None) -> None:
    text = "\n".join(lines) + "\n"
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _result_lines(result, extra: dict | None = None) -> list[str]:
    lines = []
    for key, val in (extra or {}).items():
        lines.append(f"{key}={val}")
    for key, val in sorted(result.params.items()):
        if isinstance(val, float):
            lines.append(f"{key}={_fmt(val)}")
        else:
            lines.append(f"{key}={val}")
    lines.append(f"rate={_fmt(result.rate)}")
    lines.append(f"y11_z_lower={_fmt(result.y11_z_lower)}")
    lines.append(f"e11_x_upper={_fmt(result.e11_x_upper)}")
    lines.append(f"sift_prefactor={_fmt(result.sift_prefactor)}")
    lines.append(f"gain={_fmt(result.gain)}")
    lines.append(f"error_gain={_fmt(result.error_gain)}")
    lines.append(f"p11={_fmt(result.p11)}")
    return lines


def cmd_rate(args) -> int:
    rc = load_run_config(args)
    cfg = rc.protocol_config()
    result = passive_rate(cfg)
    _emit(_result_lines(result, {"seed": rc.values["seed"]}), args.out)
    return 0


def cmd_baseline(args) -> int:
    rc = load_run_config(args)
    cfg = rc.protocol_config()
    result = active_rate(cfg, rc.active_intensities())
    _emit(_result_lines(result, {"seed": rc.values["seed"]}), args.out)
    return 0


def cmd_optimize(args) -> int:
    rc = load_run_config(args)
    cfg = rc.protocol_config()
    opt = optimize_rate(cfg, rc.values["distance_km"], protocol=args.protocol,
                        seed=rc.values["seed"])
    extra = {"seed": rc.values["seed"], "all_zero": opt.all_zero}
    _emit(_result_lines(opt.result, extra), args.out)
    return 0


SWEEP_HEADER = ("distance_km,rate_passive,rate_active,y11_lower,e11_upper,"
                "gain,error_gain,sift_prefactor")


def cmd_sweep(args) -> int:
    rc = load_run_config(args)
    distances = parse_distances(rc.values["distances"])
    rows = [SWEEP_HEADER]
    xs, passive_ys, active_ys = [], [], []
    for dist in distances:
        cfg = rc.protocol_config(distance_km=dist)
        if args.optimize:
            p = optimize_rate(cfg, dist, "passive", seed=rc.values["seed"]).result
            a = optimize_rate(cfg, dist, "active", seed=rc.values["seed"]).result
        else:
            p = passive_rate(cfg)
            a = active_rate(cfg, rc.active_intensities())
        rows.append(",".join([
            f"{dist:.6g}", _fmt(p.rate), _fmt(a.rate), _fmt(p.y11_z_lower),
            _fmt(p.e11_x_upper), _fmt(p.gain), _fmt(p.error_gain),
            _fmt(p.sift_prefactor),
        ]))
        xs.append(dist)
        passive_ys.append(p.rate)
        active_ys.append(a.rate)
    _emit(rows, args.out)
    if args.svg:
        svg = line_plot_svg(xs, {"passive": passive_ys, "active": active_ys},
                            x_label="distance (km)",
                            y_label="secret key rate (bits/pair)")
        with open(args.svg, "w", encoding="utf-8") as fh:
            fh.write(svg)
    return 0


def cmd_verify(args) -> int:
    rc = load_run_config(args)
    trials = rc.values["trials"]
    if trials < 1:
        raise ConfigError("verify requires trials >= 1")
    cfg = rc.protocol_config()
    rng = np.random.default_rng(rc.values["seed"])
    tally = simulate_trials(trials, cfg, rng)
    if args.tally:
        with open(args.tally, "w", encoding="utf-8") as fh:
            fh.write(tally.to_csv())
    from .expectations import build_gain_table
    table = build_gain_table(cfg.regions, cfg.source, cfg.channel, cfg.quad,
                             cfg.n_cut, cfg.m_cut)
    report = compare_to_analytic(tally, table)
    lines = ["basis,decoy_a,decoy_b,outcome,pairs,count,probability,z,status"]
    for row in report.rows:
        status = "empty" if row.empty else ("FLAG" if row.flagged else "ok")
        lines.append(",".join([
            row.basis, row.decoy_a, row.decoy_b, row.outcome, str(row.pairs),
            str(row.count), _fmt(row.probability), f"{row.z:.4f}", status,
        ]))
    lines.append(f"max_abs_z={report.max_abs_z:.4f}")
    lines.append(f"flagged={len(report.flagged)}")
    _emit(lines, args.out)
    return 0 if report.ok else 1


# ---------------------------------------------------------------------------
# minimal SVG line plot


def _svg_path(points: list[tuple[float, float]]) -> str:
    return "M " + " L ".join(f"{x:.2f} {y:.2f}" for x, y in points)


def line_plot_svg(xs: list[float], series: dict, x_label: str = "",
                  y_label: str = "", width: int = 640,
                  height: int = 480) -> str:
    """Log-y polyline chart; nonpositive values are dropped from their series."""
    margin = 60.0
    plot_w = width - 2 * margin
    plot_h = height - 2 * margin
    colors = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")

    pts = [(x, y) for ys in series.values() for x, y in zip(xs, ys) if y > 0]
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}" viewBox="0 0 {width} {height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>']
    if pts:
        x_lo, x_hi = min(p[0] for p in pts), max(p[0] for p in pts)
        y_lo = math.log10(min(p[1] for p in pts))
        y_hi = math.log10(max(p[1] for p in pts))
        if x_hi <= x_lo:
            x_hi = x_lo + 1.0
        if y_hi <= y_lo:
            y_hi = y_lo + 1.0

        def to_xy(x, y):
            px = margin + (x - x_lo) / (x_hi - x_lo) * plot_w
            py = height - margin - (math.log10(y) - y_lo) / (y_hi - y_lo) * plot_h
            return px, py

        for k, (name, ys) in enumerate(sorted(series.items())):
            path_pts = [to_xy(x, y) for x, y in zip(xs, ys) if y > 0]
            if not path_pts:
                continue
            color = colors[k % len(colors)]
            parts.append(f'<path d="{_svg_path(path_pts)}" fill="none" '
                         f'stroke="{color}" stroke-width="1.5"/>')
            parts.append(f'<text x="{width - margin + 4:.2f}" '
                         f'y="{margin + 16 * k + 12:.2f}" font-size="12" '
                         f'fill="{color}">{name}</text>')
    parts.append(f'<rect x="{margin}" y="{margin}" width="{plot_w}" '
                 f'height="{plot_h}" fill="none" stroke="black"/>')
    if x_label:
        parts.append(f'<text x="{width / 2:.2f}" y="{height - 12:.2f}" '
                     f'font-size="13" text-anchor="middle">{x_label}</text>')
    if y_label:
        parts.append(f'<text x="16" y="{height / 2:.2f}" font-size="13" '
                     f'text-anchor="middle" '
                     f'transform="rotate(-90 16 {height / 2:.2f})">'
                     f'{y_label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="passive-mdi",
        description="Key-rate simulation for fully passive MDI-QKD")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value configuration file")
        p.add_argument("--preset", choices=sorted(PRESETS),
                       help="detector preset")
        p.add_argument("--seed", type=int, help="random seed override")
        p.add_argument("--out", help="write output to this path instead of stdout")

    p_rate = sub.add_parser("rate", help="passive key rate at one distance")
    common(p_rate)
    p_rate.set_defaults(func=cmd_rate)

    p_base = sub.add_parser("baseline", help="active three-intensity baseline rate")
    common(p_base)
    p_base.set_defaults(func=cmd_baseline)

    p_opt = sub.add_parser("optimize", help="optimize protocol parameters")
    common(p_opt)
    p_opt.add_argument("--protocol", choices=("passive", "active"),
                       default="passive")
    p_opt.set_defaults(func=cmd_optimize)

    p_sweep = sub.add_parser("sweep", help="rate-versus-distance CSV")
    common(p_sweep)
    p_sweep.add_argument("--distances", help="a:b:step or comma list (km)")
    p_sweep.add_argument("--optimize", action="store_true",
                         help="optimize parameters at every distance")
    p_sweep.add_argument("--svg", help="also write an SVG line chart here")
    p_sweep.set_defaults(func=cmd_sweep)

    p_ver = sub.add_parser("verify",
                           help="Monte Carlo versus analytic cross-check")
    common(p_ver)
    p_ver.add_argument("--trials", type=int, help="emitted pulse pairs")
    p_ver.add_argument("--tally", help="also dump the raw tally CSV here")
    p_ver.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
