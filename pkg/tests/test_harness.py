import json
import math

import numpy as np
import pytest

from spdcfid.errors import ConfigError
from spdcfid.harness import io
from spdcfid.harness import scenario as sc
from spdcfid.harness.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_PHYSICS, main
from spdcfid.harness.config import build_config, load_config
from spdcfid.raytrace.prescription import load_prescription, parse_prescription, shipped_prescription
from spdcfid.raytrace.system import Pol, Ray
from spdcfid.raytrace.tracer import trace


# --- config ----------------------------------------------------------------------

def test_default_config_values(default_cfg):
    assert default_cfg.rays == 100_000
    assert default_cfg.pump.waist_um == 100.0
    assert default_cfg.section("crystals")["length_mm"] == 6.0
    assert default_cfg.timing == "phase"


def test_toml_and_json_configs_agree(tmp_path):
    (tmp_path / "a.toml").write_text('[run]\nseed = 5\n[lens]\nprescription = "doublet"\n')
    (tmp_path / "b.json").write_text(json.dumps({"run": {"seed": 5}, "lens": {"prescription": "doublet"}}))
    a, b = load_config(tmp_path / "a.toml"), load_config(tmp_path / "b.json")
    assert a.payload == b.payload and a.config_hash == b.config_hash


def test_config_hash_distinguishes(default_cfg):
    other = default_cfg.with_overrides(**{"run.seed": 1})
    assert other.config_hash != default_cfg.config_hash
    assert build_config().config_hash == default_cfg.config_hash


@pytest.mark.parametrize("override", [
    {"nonsense": {}},
    {"run": {"speed": 1}},
    {"sampling": {"rays": 0}},
    {"run": {"timing": "wave"}},
    {"run": {"resamples": 10}},
    {"lens": {"prescription": "missing_lens.json"}},
    {"crystals": {"cut_angle_deg": "sometimes"}},
    {"sweep": {"start_mm": 3.0, "stop_mm": 2.0}},
    {"pump": {"waist_um": -1.0}},
    {"run": {"trace_dump_rays": 20_000}},
])
def test_invalid_configs_rejected(override):
    with pytest.raises(ConfigError):
        build_config(override)


def test_unreadable_config(tmp_path):
    bad = tmp_path / "x.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.toml")


def test_relative_lens_path(tmp_path):
    src = shipped_prescription("doublet")
    payload = {"name": "copy", "surfaces": [
        {"radius_mm": s.radius_mm, "conic": s.conic, "asphere_coeffs": list(s.asphere_coeffs),
         "thickness_mm": s.thickness_mm, "material": s.material.name if s.material else "air",
         "aperture_mm": s.aperture_mm} for s in src.surfaces]}
    (tmp_path / "lens.json").write_text(json.dumps(payload))
    (tmp_path / "cfg.json").write_text(json.dumps({"lens": {"prescription": "lens.json"}}))
    cfg = load_config(tmp_path / "cfg.json")
    lens = sc.lens_prescription(cfg)
    assert lens.back_focus(810.0) == pytest.approx(src.back_focus(810.0), rel=1e-14)


# --- prescriptions ------------------------------------------------------------------

@pytest.mark.parametrize("name,f", [("asphere", 7.5), ("doublet", 16.0)])
def test_shipped_focal_lengths(name, f):
    assert shipped_prescription(name).effective_focal_length(810.0) == pytest.approx(f, rel=0.01)


def test_prescription_validation(tmp_path):
    with pytest.raises(ConfigError):
        parse_prescription({"surfaces": [{"radius_mm": 5.0, "thickness_mm": 1, "material": "N-BK7"}]})
    with pytest.raises(ConfigError):
        parse_prescription({"surfaces": [
            {"radius_mm": 5.0, "thickness_mm": 1, "material": "N-BK7", "aperture_mm": 2},
            {"radius_mm": 0, "thickness_mm": 0, "material": "N-BK7", "aperture_mm": 2}]})
    with pytest.raises(ConfigError):
        parse_prescription({"surfaces": [
            {"radius_mm": 2.0, "thickness_mm": 1, "material": "N-BK7", "aperture_mm": 3},
            {"radius_mm": 0, "thickness_mm": 0, "material": "air", "aperture_mm": 3}]})
    with pytest.raises(ConfigError):
        parse_prescription({"surfaces": [
            {"radius_mm": "big", "thickness_mm": 1, "material": "N-BK7"},
            {"radius_mm": 0, "material": "air"}]})
    bad = tmp_path / "l.json"
    bad.write_text("[")
    with pytest.raises(ConfigError):
        load_prescription(bad)


def test_asphere_lens_axial_ray_is_straight():
    lens = shipped_prescription("asphere")
    from spdcfid.raytrace.system import OpticalSystem
    from spdcfid.raytrace.tracer import trace_batch
    from spdcfid.raytrace.system import RayBatch
    built = lens.build(1.0)
    system = OpticalSystem([built], built.last_z + lens.back_focus(810.0))
    b = RayBatch(z=np.zeros(1), x=np.zeros(1), dz=np.ones(1), dx=np.zeros(1), lam_um=np.array([0.81]),
                 pol_h=np.ones(1, bool), t=np.zeros(1), start=np.zeros(1, dtype=np.int64))
    b, verts = trace_batch(b, system, record=True)
    pts = verts[0][~np.isnan(verts[0][:, 0])]
    assert len(pts) == len(system.surfaces) + 2
    assert np.all(pts[:, 1] == 0.0) and np.all(np.diff(pts[:, 0]) >= 0)


# --- io ------------------------------------------------------------------------------

def test_json_seventeen_digits(tmp_path):
    x = 0.1 + 0.2
    path = io.write_json(tmp_path / "a.json", {"x": x, "n": 3, "s": "t", "b": True, "l": [1.5, 2]})
    text = path.read_text()
    assert '"x": 0.30000000000000004' in text
    assert json.loads(text)["x"] == x
    with pytest.raises(ValueError):
        io.dumps({"bad": math.nan})


def test_csv_round_trip(tmp_path):
    path = io.write_csv(tmp_path / "a.csv", ["a", "b"], [(1.0 / 3.0, 2), (np.float64(2.5), True)], "abc")
    assert path.read_text().splitlines()[0] == "# config_hash=abc"
    header, rows = io.read_csv(path)
    assert header == ["a", "b"] and float(rows[0][0]) == 1.0 / 3.0 and rows[1] == ["2.5", "1"]


def test_output_dir_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(io.OutputError):
        io.ensure_dir(blocker / "sub")


# --- scenarios -------------------------------------------------------------------------

def test_zero_length_crystals_need_no_compensator(default_cfg):
    cfg = default_cfg.with_overrides(**{"crystals.length_mm": 0.0, "sweep.start_mm": 0.0,
                                        "sweep.stop_mm": 1.0, "sweep.step_mm": 0.01})
    res = sc.run_sweep(cfg)
    assert res.optimum_mm == 0.0


def test_sweep_band_contains_optimum(default_cfg):
    res = sc.run_sweep(default_cfg)
    assert res.band_mm[0] <= res.optimum_mm <= res.band_mm[1]
    assert np.all(np.abs(res.tau_minus_fs) >= np.abs(res.tau_minus_fs).min())


def test_band_around_contiguous():
    vals = np.array([5.0, 0.5, 0.2, 3.0, 0.1, 0.4])
    assert sc.band_around(vals, 2, 1.0) == (1, 2)
    assert sc.band_around(vals, 4, 1.0) == (4, 5)


def test_monte_carlo_sweep_flag(default_cfg):
    cfg = default_cfg.with_overrides(**{"sweep.monte_carlo": True, "sweep.monte_carlo_rays": 200,
                                        "sweep.start_mm": 3.0, "sweep.stop_mm": 3.2, "sweep.step_mm": 0.1,
                                        "run.resamples": 100})
    res = sc.run_sweep(cfg)
    assert res.fidelity is not None and res.fidelity.shape == res.lengths_mm.shape
    assert np.all((res.fidelity >= 0) & (res.fidelity <= 1))


def test_trace_dump_polylines(default_cfg):
    dump = sc.run_trace_dump(default_cfg)
    assert len(dump.lambda_nm) == 100
    for k in range(100):
        pts = dump.vertices[k][~np.isnan(dump.vertices[k][:, 0])]
        assert len(pts) >= 2
        if dump.status[k] == 0:
            assert pts[-1, 0] == pytest.approx(pts.max(axis=0)[0])
    # the default collection cone sits well inside both lens apertures
    assert np.count_nonzero(dump.status) == 0


def test_collinear_fidelity_falls_with_bandwidth(default_cfg):
    # axial pairs only: what remains is the chromatic residual of the compensated stack
    Fs = []
    for w in (0.05, 1.0, 10.0):
        cfg = default_cfg.with_overrides(**{"lens.prescription": "none", "sampling.collinear_only": True,
                                            "sampling.rays": 4000, "sampling.half_width_nm": w})
        Fs.append(sc.run_fidelity(cfg).estimate.F)
    assert Fs[0] > 0.999
    assert Fs[0] > Fs[1] > Fs[2]


def test_loss_warning(default_cfg):
    cfg = default_cfg.with_overrides(**{"lens.distance_mm": 2000.0, "sampling.rays": 500,
                                        "run.resamples": 100})
    with pytest.warns(RuntimeWarning, match="unreliable"):
        run = sc.run_fidelity(cfg)
    assert run.estimate.loss_fraction > 0.5


# --- cli -----------------------------------------------------------------------------------

def test_cli_pm_angle(tmp_path, capsys):
    assert main(["pm-angle", "--out", str(tmp_path)]) == EXIT_OK
    data = json.loads((tmp_path / "pm_angle.json").read_text())
    assert data["cut_angle_deg"] == pytest.approx(28.82, abs=0.3)
    assert len(data["config_hash"]) == 64
    assert "28.7" in capsys.readouterr().out


def test_cli_exit_codes(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"pair": {"signal_nm": 300.0, "idler_nm": 810.0}}))
    assert main(["pm-angle", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_PHYSICS
    wrong = tmp_path / "wrong.json"
    wrong.write_text(json.dumps({"run": {"color": "red"}}))
    assert main(["pm-angle", "--config", str(wrong), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["fidelity", "--rays", "0", "--out", str(tmp_path)]) == EXIT_CONFIG
    blocker = tmp_path / "f"
    blocker.write_text("")
    assert main(["pm-angle", "--out", str(blocker / "x")]) == EXIT_IO
    with pytest.raises(SystemExit) as exc:
        main(["fly"])
    assert exc.value.code == 2


def test_cli_fidelity_outputs(tmp_path):
    code = main(["fidelity", "--rays", "3000", "--resamples", "100", "--seed", "4", "--lens", "doublet",
                 "--out", str(tmp_path)])
    assert code == EXIT_OK
    data = json.loads((tmp_path / "fidelity.json").read_text())
    for key in ("F", "sigma_F", "mean_f_re", "mean_f_im", "n_accepted", "loss_fraction", "seed", "config_hash"):
        assert key in data
    assert data["seed"] == 4 and data["lens"] == "doublet"
    assert data["F"] == pytest.approx(0.5 * (1 + data["mean_f_re"]), abs=1e-15)
    for name in ("tau_plus_hist.csv", "tau_minus_hist.csv"):
        header, rows = io.read_csv(tmp_path / name)
        assert header == ["bin_left_fs", "bin_right_fs", "count"]
        assert sum(int(r[2]) for r in rows) == data["n_accepted"]


def test_cli_other_commands(tmp_path):
    assert main(["trace-dump", "--rays", "10", "--out", str(tmp_path)]) == EXIT_OK
    header, rows = io.read_csv(tmp_path / "rays.csv")
    assert header == ["ray_id", "lambda_nm", "pol", "x_mm", "t_fs", "status"] and len(rows) == 10
    header, rows = io.read_csv(tmp_path / "polylines.csv")
    assert header == ["ray_id", "vertex", "z_mm", "x_mm"]
    assert {int(r[0]) for r in rows} == set(range(10))
    assert main(["compensator-sweep", "--out", str(tmp_path), "--timing", "group"]) == EXIT_OK
    summary = json.loads((tmp_path / "sweep_summary.json").read_text())
    assert summary["optimum_mm"] == pytest.approx(3.12, abs=0.15)


def test_override_unknown_key(default_cfg):
    with pytest.raises(ConfigError):
        default_cfg.with_overrides(**{"sampling.lambda_min_nm": 800.0})
