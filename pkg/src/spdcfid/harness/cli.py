"""Command-line entry point: ``spdcfid <command> [options]``."""

from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path

import numpy as np

from .. import __version__
from ..dispersion import get_material
from ..entanglement import Histogram
from ..errors import ConfigError, PhysicsError, SimulationError
from ..raytrace.system import STATUS_NAMES
from ..spdc import phase_matching_angle
from . import io
from . import scenario as sc
from .config import ScenarioConfig, load_config

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PHYSICS = 3
EXIT_IO = 4


def _overrides(args) -> dict:
    out = {}
    if args.seed is not None:
        out["run.seed"] = args.seed
    if args.timing is not None:
        out["run.timing"] = args.timing
    if args.resamples is not None:
        out["run.resamples"] = args.resamples
    if args.lens is not None:
        out["lens.prescription"] = args.lens
    if args.rays is not None:
        key = "run.trace_dump_rays" if args.command == "trace-dump" else "sampling.rays"
        out[key] = args.rays
    return out


def _config(args) -> ScenarioConfig:
    cfg = load_config(args.config)
    changes = _overrides(args)
    return cfg.with_overrides(**changes) if changes else cfg


def _hist_rows(h: Histogram):
    return ((h.edges[k], h.edges[k + 1], int(c)) for k, c in enumerate(h.counts))


# ---------------------------------------------------------------------------
# commands


def cmd_pm_angle(cfg: ScenarioConfig, out: Path, workers: int) -> dict:
    pair = cfg.section("pair")
    material = cfg.section("crystals")["material"]
    theta = phase_matching_angle(cfg.pump.wavelength_nm, pair["signal_nm"], pair["idler_nm"],
                                 get_material(material))
    result = {
        "cut_angle_deg": theta,
        "lambda_p_nm": cfg.pump.wavelength_nm,
        "lambda_s_nm": float(pair["signal_nm"]),
        "lambda_i_nm": float(pair["idler_nm"]),
        "material": material,
        "config_hash": cfg.config_hash,
    }
    io.write_json(out / "pm_angle.json", result)
    print(f"phase-matching angle: {theta:.4f} deg")
    return result


def cmd_emission_map(cfg: ScenarioConfig, out: Path, workers: int) -> dict:
    emap = sc.run_emission_map(cfg)
    angle = float(cfg.section("emission_map")["capture_angle_deg"])
    bands = sc.capture_bands(cfg)
    frac = emap.band_capture_fraction(bands, angle)
    rows = ((lam, a, emap.values[i, j])
            for i, lam in enumerate(emap.lambda_nm) for j, a in enumerate(emap.alpha_deg))
    io.write_csv(out / "emission_map.csv", ["lambda_nm", "alpha_deg", "efficiency"], rows, cfg.config_hash)
    result = {
        "cut_angle_deg": sc.cut_angle(cfg),
        "capture_angle_deg": angle,
        "bands_nm": [list(b) for b in bands],
        "band_capture_fraction": frac,
        "max_efficiency": float(emap.values.max()),
        "config_hash": cfg.config_hash,
    }
    io.write_json(out / "emission_summary.json", result)
    print(f"band capture within {angle} deg (external): {frac:.4f}")
    return result


def cmd_compensator_sweep(cfg: ScenarioConfig, out: Path, workers: int) -> dict:
    res = sc.run_sweep(cfg, workers)
    header = ["post_length_mm", "tau_minus_fs"]
    cols = [res.lengths_mm, res.tau_minus_fs]
    if res.fidelity is not None:
        header.append("fidelity")
        cols.append(res.fidelity)
    io.write_csv(out / "sweep.csv", header, zip(*cols), cfg.config_hash)
    result = {
        "optimum_mm": res.optimum_mm,
        "tau_minus_at_optimum_fs": float(res.tau_minus_fs[np.argmin(np.abs(res.tau_minus_fs))]),
        "band_lo_mm": res.band_mm[0],
        "band_hi_mm": res.band_mm[1],
        "band_half_width_mm": res.band_half_width_mm,
        "band_clipped": res.band_clipped,
        "threshold_fs": res.threshold_fs,
        "timing": cfg.section("compensators")["post_timing"],
        "config_hash": cfg.config_hash,
    }
    io.write_json(out / "sweep_summary.json", result)
    clip = " (band reaches the grid edge)" if res.band_clipped else ""
    print(f"optimum post-compensator: {res.optimum_mm:.4f} mm; "
          f"|tau_-| < {res.threshold_fs:.1f} fs over {res.band_mm[0]:.4f}..{res.band_mm[1]:.4f} mm{clip}")
    return result


def cmd_fidelity(cfg: ScenarioConfig, out: Path, workers: int) -> dict:
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        run = sc.run_fidelity(cfg, workers)
    for w in caught:
        print(f"WARNING: {w.message}", file=sys.stderr)
    est = run.estimate
    p = run.params
    result = {
        "F": est.F,
        "sigma_F": est.sigma_F,
        "mean_f_re": est.mean_f.real,
        "mean_f_im": est.mean_f.imag,
        "n_accepted": est.n_accepted,
        "loss_fraction": est.loss_fraction,
        "seed": cfg.seed,
        "config_hash": cfg.config_hash,
        "lens": cfg.lens,
        "timing": cfg.timing,
        "rays": cfg.rays,
        "pre_length_mm": p.pre_length_mm,
        "pre_axis_plane": p.pre_plane.value,
        "post_length_mm": p.post_length_mm,
        "cut_angle_deg": p.cut_angle_deg,
    }
    io.write_json(out / "fidelity.json", result)
    hdr = ["bin_left_fs", "bin_right_fs", "count"]
    io.write_csv(out / "tau_plus_hist.csv", hdr, _hist_rows(run.taus.hist_plus), cfg.config_hash)
    io.write_csv(out / "tau_minus_hist.csv", hdr, _hist_rows(run.taus.hist_minus), cfg.config_hash)
    print(f"F = {est.F:.4f} +/- {est.sigma_F:.4f} ({est.n_accepted} events, "
          f"loss {100 * est.loss_fraction:.2f}%)")
    return result


def cmd_trace_dump(cfg: ScenarioConfig, out: Path, workers: int) -> dict:
    dump = sc.run_trace_dump(cfg)
    n = len(dump.lambda_nm)
    pol = np.where(dump.pol_h, "H", "V")
    rows = ((k, dump.lambda_nm[k], pol[k], dump.x_mm[k], dump.t_fs[k], STATUS_NAMES[int(dump.status[k])])
            for k in range(n))
    io.write_csv(out / "rays.csv", ["ray_id", "lambda_nm", "pol", "x_mm", "t_fs", "status"], rows,
                 cfg.config_hash)

    def vertices():
        for k in range(n):
            pts = dump.vertices[k]
            keep = ~np.isnan(pts[:, 0])
            for j, (z, x) in enumerate(pts[keep]):
                yield k, j, z, x

    io.write_csv(out / "polylines.csv", ["ray_id", "vertex", "z_mm", "x_mm"], vertices(), cfg.config_hash)
    dead = int(np.count_nonzero(dump.status != 0))
    print(f"traced {n} rays, {dead} dead")
    return {"rays": n, "dead": dead, "config_hash": cfg.config_hash}


COMMANDS = {
    "pm-angle": (cmd_pm_angle, "phase-matching cut angle"),
    "emission-map": (cmd_emission_map, "phase-matching efficiency over wavelength and angle"),
    "compensator-sweep": (cmd_compensator_sweep, "post-compensator length sweep of tau_minus"),
    "fidelity": (cmd_fidelity, "Monte Carlo entanglement fidelity with tau histograms"),
    "trace-dump": (cmd_trace_dump, "per-ray polylines for plotting"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spdcfid", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", metavar="PATH", help="JSON or TOML scenario file")
        p.add_argument("--seed", type=int, metavar="N")
        p.add_argument("--rays", type=int, metavar="N",
                       help="events to sample (rays to dump for trace-dump)")
        p.add_argument("--out", metavar="DIR", default=".", help="output directory (default: .)")
        p.add_argument("--timing", choices=["phase", "group"])
        p.add_argument("--resamples", type=int, metavar="N", help="bootstrap resamples")
        p.add_argument("--lens", metavar="NAME", help="none, asphere, doublet or a prescription path")
        p.add_argument("--workers", type=int, metavar="N", default=1, help="worker processes")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    func = COMMANDS[args.command][0]
    try:
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1")
        cfg = _config(args)
        out = io.ensure_dir(args.out)
        func(cfg, out, args.workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (io.OutputError, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (PhysicsError, SimulationError) as exc:
        print(f"physics error: {exc}", file=sys.stderr)
        return EXIT_PHYSICS
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
