import json
import math

import numpy as np
import pytest

from fiberqed import cli
from fiberqed.cli import ConfigError, main, parse_complex, parse_config, run_scenario


def test_parse_complex_forms():
    assert parse_complex("1.5") == 1.5
    assert parse_complex("1e-2+3i") == complex(0.01, 3)
    assert parse_complex("-2.5i") == complex(0, -2.5)
    assert parse_complex("0.5-1e1i") == complex(0.5, -10)
    for bad in ("1+2j", "abc", "1++2i", ""):
        with pytest.raises(ValueError):
            parse_complex(bad)


def test_preset_values():
    cfg = parse_config("[model]\npreset = paper-sec3\n[scenario]\nscenario = regime\n")
    p = cfg.model
    assert (p.Delta0, p.Delta1, abs(p.Omega0), abs(p.Omega1), abs(p.Omega2), p.nu, p.delta) == (
        100, -100, 1, 10, 10, 0.1, 0.01
    )


def test_missing_scenario_names_key():
    with pytest.raises(ConfigError) as exc:
        parse_config("[model]\nN1 = 2\n")
    assert exc.value.key == "scenario"
    with pytest.raises(ConfigError) as exc:
        parse_config("[scenario]\nscenario =\n")
    assert exc.value.key == "scenario"


@pytest.mark.parametrize(
    "text, key, line",
    [
        ("[scenario]\nscenario = ideal\nbogus = 1\n", "bogus", 3),
        ("[scenario]\nscenario = ideal\n[model]\nN1 = 2\nN1 = 3\n", "N1", 5),
        ("[scenario]\nscenario = ideal\n[model]\nN1 = 0\n", "N1", 4),
        ("[scenario]\nscenario = ideal\n[model]\ng0 = 1+1j\n", "g0", 4),
        ("[scenario]\nscenario = ideal\n[run]\ntrajectories = 0\n", "trajectories", 4),
        ("[scenario]\nscenario = ideal\n[model]\nkappa_c = -1\n", "kappa_c", 4),
    ],
)
def test_config_errors_carry_key_and_line(text, key, line):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.key == key
    assert exc.value.line == line
    assert key in str(exc.value)


def test_unknown_section():
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config("[extras]\nx = 1\n")


def test_fig2_pins_case_with_warning():
    cfg = parse_config("[model]\nN1 = 4\nkappa_c = 0.3\n[scenario]\nscenario = fig2\ncase = a\n")
    assert (cfg.model.N1, cfg.model.N2, cfg.model.kappa_c) == (2, 2, 0.1)
    assert len(cfg.warnings) == 2
    cfg = parse_config("[scenario]\nscenario = fig2\ncase = d\n")
    assert (cfg.model.N1, cfg.model.kappa_c) == (5, 0.5)


def test_lossless_zeroes_rates():
    cfg = parse_config("[model]\nkappa_c = 0.2\ngamma_e = 1\n[scenario]\nscenario = effective\nlossless = true\n")
    assert cfg.model.kappa_c == 0 and cfg.model.gamma_e == 0


def test_comments_and_scientific_notation():
    cfg = parse_config("# header\n[model]\ndelta = 1e-2  # two-photon\n[scenario]\nscenario = regime\n")
    assert cfg.model.delta == 0.01


def test_regime_report_stark_shift():
    res = run_scenario(parse_config("[model]\npreset = paper-sec3\n[scenario]\nscenario = regime\n"), write=False)
    assert res.summary["regime_report"]["stark_shift_level0"] == pytest.approx(-0.99)


@pytest.mark.parametrize("init", ["ground", "opposite"])
def test_ideal_scenario_fidelity(init):
    res = run_scenario(parse_config(f"[model]\npreset = paper-sec3\n[scenario]\nscenario = ideal\ninit = {init}\n"),
                       write=False)
    assert res.summary["final_fidelity"] == pytest.approx(1.0, abs=1e-10)
    assert len(res.series.times) == 200


def test_noon_and_gauge_scenarios():
    res = run_scenario(parse_config("[model]\nN1 = 3\nN2 = 3\n[scenario]\nscenario = noon\n"), write=False)
    assert res.summary["noon_fidelity"] == pytest.approx(1.0, abs=1e-12)
    assert res.summary["involution_error"] == 0
    g = run_scenario(parse_config("[scenario]\nscenario = gauge\n[run]\nseed = 4\n"), write=False).summary["gauge"]
    assert g["spectrum_difference"] < 1e-10
    assert g["matched_phase_spread"] < 1e-10


SMALL = """[model]
preset = paper-sec3
N1 = 1
N2 = 1
kappa_c = 0.1
[scenario]
scenario = effective
K = 1
[run]
trajectories = 6
seed = 17
method = mcwf
"""


def test_outputs_are_byte_identical(tmp_path):
    paths = []
    for name in ("one", "two"):
        cfg = parse_config(SMALL + f"[output]\ndir = {tmp_path / name}\n")
        run_scenario(cfg)
        paths.append(tmp_path / name)
    for f in ("series.csv", "summary.json", "jumps.csv"):
        assert (paths[0] / f).read_bytes() == (paths[1] / f).read_bytes()
    lines = (paths[0] / "series.csv").read_text().splitlines()
    assert lines[0] == "t,P_ground,P_excited,coh_re,coh_im,fidelity"
    assert len(lines) == 201


def test_summary_final_fidelity_is_last_csv_row(tmp_path):
    cfg = parse_config(SMALL + f"[output]\ndir = {tmp_path}\n")
    run_scenario(cfg)
    summary = json.loads((tmp_path / "summary.json").read_text())
    last = (tmp_path / "series.csv").read_text().splitlines()[-1].split(",")
    assert float(last[-1]) == summary["final_fidelity"]
    assert float(last[0]) == pytest.approx(summary["timing"]["tau"])
    assert summary["trajectory_seeds"][0] == [17, 0]


def test_main_exit_codes(tmp_path, capsys):
    cfgfile = tmp_path / "c.ini"
    cfgfile.write_text("[model]\nbogus = 1\n")
    assert main(["ideal", "--config", str(cfgfile)]) == 1
    assert "bogus" in capsys.readouterr().err
    cfgfile.write_text("[model]\npreset = paper-sec3\nN1 = 1\nN2 = 1\nn_max = 2\n[scenario]\nn_c = 2\nK = 1\n")
    # mode c truncated at 2 photons overflows during the protocol
    assert main(["simulate", "--config", str(cfgfile), "--out", str(tmp_path / "o")]) == 2
    assert "cutoff" in capsys.readouterr().err
    assert main(["regime", "--out", str(tmp_path / "r")]) == 0
    assert (tmp_path / "r" / "summary.json").exists()


def test_main_overrides_seed_and_trajectories(tmp_path):
    cfgfile = tmp_path / "c.ini"
    cfgfile.write_text(SMALL.replace("trajectories = 6", "trajectories = 2"))
    assert main(["simulate", "--config", str(cfgfile), "--seed", "3", "--trajectories", "3",
                 "--out", str(tmp_path / "o")]) == 0
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["trajectories"] == 3 and summary["seed"] == 3


def test_set_key_inserts_and_replaces():
    text = cli._set_key("[scenario]\ncase = b\n[run]\nseed = 1\n", "scenario", "case", "a")
    assert "case = a" in text and "case = b" not in text
    text = cli._set_key("[run]\nseed = 1\n", "model", "preset", "paper-sec3")
    assert text.endswith("[model]\npreset = paper-sec3\n")


def test_fig2_lossless_calibrated_reaches_target():
    cfg = parse_config(
        "[model]\npreset = calibrated\n[scenario]\nscenario = fig2\ncase = a\nlossless = true\nK = 1\n"
    )
    res = run_scenario(cfg, write=False)
    assert res.summary["fidelity_at"]["K=1"]["fidelity"] > 0.99
    assert not math.isnan(res.summary["final_fidelity"])
    assert np.isfinite(res.series.values).all()
