"""Command-line surface: artifacts, formats, determinism, exit codes."""

import csv
import json
import subprocess
import sys

import pytest

from yieldrisk.cli import main
from yieldrisk.data import write_yield_panel
from yieldrisk.decomposition import decompose, decomposition_csv_rows

from test_estimation import raw_record


def run(capsys, *argv):
    rc = main(list(argv))
    captured = capsys.readouterr()
    return rc, captured.out, captured.err


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    cfg = d / "config.yaml"
    cfg.write_text("villages: 4\ntimes: 3\nhouseholds_per_village: 3\n"
                   "parcels_per_household: 2\nseed: 4\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(d / "out")]) == 0
    return d


@pytest.fixture(scope="module")
def rain_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("rain")
    cfg = d / "config.yaml"
    cfg.write_text("kind: rainfall\nvillages: 2\nyears: [2000, 2001]\nseed: 2\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(d / "out")]) == 0
    return d


@pytest.fixture(scope="module")
def mle_dir(sim_dir, tmp_path_factory):
    d = tmp_path_factory.mktemp("mle")
    cfg = d / "config.yaml"
    cfg.write_text("em_iterations: 8\n")
    assert main(["fit-mle", "--panel", str(sim_dir / "out" / "panel.csv"),
                 "--config", str(cfg), "--out", str(d)]) == 0
    return d


def test_no_command_prints_help(capsys):
    rc, out, _ = run(capsys, )
    assert rc == 2
    assert "usage" in out


def test_simulate_panel_artifacts(sim_dir, capsys):
    out = sim_dir / "out"
    assert (out / "panel.csv").exists()
    truth = json.loads((out / "truth.json").read_text())
    assert truth["n_obs"] == 72
    assert set(truth["variances"]) == {"parcel", "household", "season",
                                       "village", "time", "idiosyncratic"}
    assert "effects" not in truth
    assert "icc" in truth["decomposition"]
    header = read_csv(out / "panel.csv")[0]
    assert header[:4] == ["parcel_id", "household_id", "village_id", "time_id"]


def test_simulate_is_byte_deterministic(sim_dir, tmp_path, capsys):
    rc, _, _ = run(capsys, "simulate", "--config", str(sim_dir / "config.yaml"),
                   "--out", str(tmp_path))
    assert rc == 0
    for name in ("panel.csv", "truth.json"):
        assert (tmp_path / name).read_bytes() == \
            (sim_dir / "out" / name).read_bytes()


def test_simulate_seed_flag_overrides_config(sim_dir, tmp_path, capsys):
    rc, _, _ = run(capsys, "simulate", "--config", str(sim_dir / "config.yaml"),
                   "--seed", "9", "--out", str(tmp_path))
    assert rc == 0
    assert (tmp_path / "panel.csv").read_bytes() != \
        (sim_dir / "out" / "panel.csv").read_bytes()


def test_simulate_json_format_and_effects(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("villages: 2\ntimes: 2\nhouseholds_per_village: 2\n"
                   "parcels_per_household: 1\ninclude_effects: true\nseed: 1\n")
    rc, out, _ = run(capsys, "simulate", "--config", str(cfg),
                     "--out", str(tmp_path), "--format", "json")
    assert rc == 0
    summary = json.loads(out)
    assert summary["kind"] == "panel"
    truth = json.loads((tmp_path / "truth.json").read_text())
    assert "effects" in truth
    assert all("|" in k for k in truth["effects"]["season"])


def test_simulate_rainfall(rain_dir, tmp_path, capsys):
    out = rain_dir / "out"
    rows = read_csv(out / "rainfall.csv")
    assert rows[0] == ["village_id", "date", "rain_mm", "region"]
    truth = json.loads((out / "truth.json").read_text())
    assert len(truth["totals"]) == 4
    rc, printed, _ = run(capsys, "simulate", "--config",
                         str(rain_dir / "config.yaml"), "--out", str(tmp_path),
                         "--format", "json")
    assert rc == 0
    assert json.loads(printed)["n_series"] == 4
    assert (tmp_path / "rainfall.csv").read_bytes() == \
        (out / "rainfall.csv").read_bytes()


def test_simulate_rejects_unknown_key(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("villages: 2\nacreage: 40\n")
    rc, _, err = run(capsys, "simulate", "--config", str(cfg),
                     "--out", str(tmp_path))
    assert rc == 2
    payload = json.loads(err)
    assert payload["error"] == "ConfigError"
    assert "acreage" in payload["message"]


def test_simulate_rejects_unknown_kind(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("kind: weather\n")
    rc, _, err = run(capsys, "simulate", "--config", str(cfg),
                     "--out", str(tmp_path))
    assert rc == 2
    assert json.loads(err)["error"] == "ConfigError"


def test_config_formats_are_equivalent(tmp_path, capsys):
    base = "villages: 2\ntimes: 2\nhouseholds_per_village: 2\nparcels_per_household: 1\nseed: 3\n"
    (tmp_path / "c.yaml").write_text(base)
    (tmp_path / "c.json").write_text(json.dumps(
        {"villages": 2, "times": 2, "households_per_village": 2,
         "parcels_per_household": 1, "seed": 3}))
    (tmp_path / "c.toml").write_text(
        "villages = 2\ntimes = 2\nhouseholds_per_village = 2\n"
        "parcels_per_household = 1\nseed = 3\n")
    panels = []
    for ext in ("yaml", "json", "toml"):
        out = tmp_path / ext
        rc, _, _ = run(capsys, "simulate", "--config",
                       str(tmp_path / f"c.{ext}"), "--out", str(out))
        assert rc == 0
        panels.append((out / "panel.csv").read_bytes())
    assert panels[0] == panels[1] == panels[2]


def test_config_error_paths(tmp_path, capsys):
    rc, _, err = run(capsys, "simulate", "--config", str(tmp_path / "nope.yaml"),
                     "--out", str(tmp_path))
    assert rc == 2
    assert json.loads(err)["error"] == "ConfigError"

    bad_ext = tmp_path / "c.ini"
    bad_ext.write_text("villages=2")
    rc, _, err = run(capsys, "simulate", "--config", str(bad_ext),
                     "--out", str(tmp_path))
    assert rc == 2

    listy = tmp_path / "l.yaml"
    listy.write_text("- 1\n- 2\n")
    rc, _, err = run(capsys, "simulate", "--config", str(listy),
                     "--out", str(tmp_path))
    assert rc == 2
    assert "mapping" in json.loads(err)["message"]


def test_fit_ols_formats(sim_dir, tmp_path, capsys):
    panel = str(sim_dir / "out" / "panel.csv")
    rc, out, _ = run(capsys, "fit-ols", "--panel", panel, "--out", str(tmp_path))
    assert rc == 0
    assert "method: ols" in out
    d = json.loads((tmp_path / "fit.json").read_text())
    assert d["method"] == "ols"
    assert d["r_squared"] is not None

    rc, out, _ = run(capsys, "fit-ols", "--panel", panel, "--out", str(tmp_path),
                     "--format", "csv")
    assert rc == 0
    rows = list(csv.reader(out.splitlines()))
    assert rows[0] == ["kind", "name", "estimate", "se"]
    assert any(r[0] == "variance" and r[1] == "idiosyncratic" for r in rows[1:])

    rc, out, _ = run(capsys, "fit-ols", "--panel", panel, "--out", str(tmp_path),
                     "--format", "json")
    assert rc == 0
    assert json.loads(out)["method"] == "ols"


def test_fit_missing_panel_exits_2(tmp_path, capsys):
    rc, _, err = run(capsys, "fit-ols", "--panel", str(tmp_path / "missing.csv"),
                     "--out", str(tmp_path))
    assert rc == 2
    payload = json.loads(err)
    assert payload["error"] == "SchemaError"
    assert "cannot read" in payload["message"]


def test_fit_bad_rows_exit_2_with_lines(tmp_path, capsys):
    p = tmp_path / "panel.csv"
    p.write_text("parcel_id,household_id,village_id,time_id,crop,yield,labor,"
                 "fertilizer,mechanization,pesticide\n"
                 "p1,h1,v1,t1,rice,100,1,1,1,1\n"
                 "p2,h1,v1,t1,rice,-5,1,1,1,1\n")
    rc, _, err = run(capsys, "fit-ols", "--panel", str(p), "--out", str(tmp_path))
    assert rc == 2
    payload = json.loads(err)
    assert payload["error"] == "RowError"
    assert payload["lines"] == [3]


def test_fit_mle_artifacts_and_determinism(sim_dir, mle_dir, tmp_path, capsys):
    d = json.loads((mle_dir / "fit.json").read_text())
    assert d["method"] == "mle"
    assert d["levels"] == ["parcel", "household", "season", "village", "time"]
    assert set(d["variances"]) == {"parcel", "household", "season", "village",
                                   "time", "idiosyncratic"}
    cfg = tmp_path / "c.yaml"
    cfg.write_text("em_iterations: 8\n")
    rc, _, _ = run(capsys, "fit-mle", "--panel",
                   str(sim_dir / "out" / "panel.csv"), "--config", str(cfg),
                   "--out", str(tmp_path))
    assert rc == 0
    assert (tmp_path / "fit.json").read_bytes() == \
        (mle_dir / "fit.json").read_bytes()


def test_fit_mle_numerical_failure_exits_1(tmp_path, capsys):
    recs = []
    for i in range(12):
        recs.append(raw_record(5.0 + 0.1 * i, parcel=f"p{i}", household=f"h{i}",
                               village=f"v{i % 2}", time="t0",
                               inputs=(float(i + 1), float(i + 1), 2.0, 3.0)))
    panel = tmp_path / "panel.csv"
    write_yield_panel(panel, recs)
    cfg = tmp_path / "c.yaml"
    cfg.write_text("on_deficient: raise\nlevels: [village]\n")
    rc, _, err = run(capsys, "fit-mle", "--panel", str(panel),
                     "--config", str(cfg), "--out", str(tmp_path))
    assert rc == 1
    payload = json.loads(err)
    assert payload["error"] == "RankDeficiencyError"
    assert payload["columns"]


def test_fit_bayes_artifacts(sim_dir, tmp_path, capsys):
    panel = str(sim_dir / "out" / "panel.csv")
    cfg = tmp_path / "c.yaml"
    cfg.write_text("chains: 1\nburn: 20\nkeep: 24\nseed: 6\n")
    rc, out, _ = run(capsys, "fit-bayes", "--panel", panel, "--config", str(cfg),
                     "--out", str(tmp_path / "a"))
    assert rc == 0
    assert "method: bayes" in out
    d = json.loads((tmp_path / "a" / "fit.json").read_text())
    assert d["method"] == "bayes"
    assert d["chains"] == 1
    assert "dic" in d and "rhat" in d
    summary = read_csv(tmp_path / "a" / "summary.csv")
    n_params = len(summary) - 1
    draws = read_csv(tmp_path / "a" / "draws.csv")
    assert len(draws) == 1 + 24 * n_params
    assert draws[0] == ["chain", "iter", "parameter", "value"]

    rc, _, _ = run(capsys, "fit-bayes", "--panel", panel, "--config", str(cfg),
                   "--out", str(tmp_path / "b"))
    assert rc == 0
    assert (tmp_path / "a" / "draws.csv").read_bytes() == \
        (tmp_path / "b" / "draws.csv").read_bytes()

    rc, _, _ = run(capsys, "fit-bayes", "--panel", panel, "--config", str(cfg),
                   "--seed", "7", "--out", str(tmp_path / "c"))
    assert rc == 0
    assert (tmp_path / "a" / "draws.csv").read_bytes() != \
        (tmp_path / "c" / "draws.csv").read_bytes()


def test_fit_bayes_csv_format(sim_dir, tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("chains: 1\nburn: 5\nkeep: 6\n")
    rc, out, _ = run(capsys, "fit-bayes", "--panel",
                     str(sim_dir / "out" / "panel.csv"), "--config", str(cfg),
                     "--out", str(tmp_path), "--format", "csv")
    assert rc == 0
    rows = list(csv.reader(out.splitlines()))
    assert rows[0] == ["parameter", "mean", "sd", "q2.5", "median", "q97.5",
                       "rhat", "ess"]


def test_profile_artifacts(sim_dir, tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("levels: [parcel, village]\ninclude_covariates: false\n"
                   "n_points: 5\nhalf_width_se: 1.5\nem_iterations: 12\n")
    panel = str(sim_dir / "out" / "panel.csv")
    rc, out, _ = run(capsys, "profile", "--panel", panel, "--config", str(cfg),
                     "--parameter", "var[village]",
                     "--parameter", "var[idiosyncratic]",
                     "--out", str(tmp_path))
    assert rc == 0
    assert "var[village]" in out and "var[idiosyncratic]" in out
    rows = read_csv(tmp_path / "profile.csv")
    assert rows[0] == ["parameter", "theta", "abs_zeta"]
    names = {r[0] for r in rows[1:]}
    assert names == {"var[village]", "var[idiosyncratic]"}
    for r in rows[1:]:
        assert float(r[2]) >= 0.0


def test_profile_unknown_parameter_exits_2(sim_dir, tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("levels: [village]\ninclude_covariates: false\n"
                   "em_iterations: 5\n")
    rc, _, err = run(capsys, "profile", "--panel",
                     str(sim_dir / "out" / "panel.csv"), "--config", str(cfg),
                     "--parameter", "var[weather]", "--out", str(tmp_path))
    assert rc == 2
    assert json.loads(err)["error"] == "DomainError"


def test_decompose_matches_library(mle_dir, tmp_path, capsys):
    fit = mle_dir / "fit.json"
    rc, out, _ = run(capsys, "decompose", "--fit", str(fit),
                     "--out", str(tmp_path), "--format", "json")
    assert rc == 0
    payload = json.loads(out)
    assert "icc" in payload and "share" in payload
    variances = json.loads(fit.read_text())["variances"]
    want = decomposition_csv_rows(decompose(variances))
    got = read_csv(tmp_path / "decomposition.csv")
    assert got == [[str(c) for c in row] for row in want]


def test_decompose_error_paths(tmp_path, capsys):
    rc, _, err = run(capsys, "decompose", "--fit", str(tmp_path / "nope.json"),
                     "--out", str(tmp_path))
    assert rc == 2
    assert json.loads(err)["error"] == "ConfigError"
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"method": "ols"}))
    rc, _, err = run(capsys, "decompose", "--fit", str(bad), "--out", str(tmp_path))
    assert rc == 2
    assert "variances" in json.loads(err)["message"]


CONTRACT = {
    "label": "unit",
    "phases": [
        {"phase": "I", "strike": 200.0, "exit": 50.0, "slope": 8.0,
         "max_payout": 900.0},
        {"phase": "II", "strike": 180.0, "exit": 40.0},
        {"phase": "III", "strike": 250.0, "exit": 420.0, "direction": "excess"},
    ],
}


def test_price_artifacts(rain_dir, tmp_path, capsys):
    contract = tmp_path / "contract.json"
    contract.write_text(json.dumps(CONTRACT))
    rain = str(rain_dir / "out" / "rainfall.csv")
    rc, out, _ = run(capsys, "price", "--rainfall", rain,
                     "--contract", str(contract), "--out", str(tmp_path / "a"))
    assert rc == 0
    assert "unit" in out
    assert (tmp_path / "a" / "pricing.csv").exists()
    cells = read_csv(tmp_path / "a" / "cells.csv")
    assert len(cells) == 1 + 4 * 3   # 2 villages x 2 years x 3 phases

    rc, printed, _ = run(capsys, "price", "--rainfall", rain,
                         "--contract", str(contract), "--premium", "250",
                         "--out", str(tmp_path / "b"), "--format", "json")
    assert rc == 0
    payload = json.loads(printed)
    assert payload["commercial_premium_rs"] == 250.0
    assert payload["fair_premium_rs"] > 0
    assert payload["loading_factor"] == pytest.approx(
        250.0 / payload["fair_premium_rs"])


def test_price_toml_contract_matches_json(rain_dir, tmp_path, capsys):
    (tmp_path / "contract.json").write_text(json.dumps(CONTRACT))
    toml_lines = ['label = "unit"']
    for ph in CONTRACT["phases"]:
        toml_lines.append("[[phases]]")
        for k, v in ph.items():
            toml_lines.append(f'{k} = "{v}"' if isinstance(v, str) else f"{k} = {v}")
    (tmp_path / "contract.toml").write_text("\n".join(toml_lines) + "\n")
    rain = str(rain_dir / "out" / "rainfall.csv")
    for name in ("contract.json", "contract.toml"):
        rc, _, _ = run(capsys, "price", "--rainfall", rain,
                       "--contract", str(tmp_path / name),
                       "--out", str(tmp_path / name.split(".")[1]))
        assert rc == 0
    assert (tmp_path / "json" / "pricing.csv").read_bytes() == \
        (tmp_path / "toml" / "pricing.csv").read_bytes()


def test_price_error_paths(rain_dir, tmp_path, capsys):
    rain = str(rain_dir / "out" / "rainfall.csv")
    rc, _, err = run(capsys, "price", "--rainfall", rain,
                     "--contract", str(tmp_path / "nope.json"),
                     "--out", str(tmp_path))
    assert rc == 2
    assert json.loads(err)["error"] == "ContractError"

    contract = tmp_path / "contract.json"
    contract.write_text(json.dumps(CONTRACT))
    bad = tmp_path / "bad.csv"
    bad.write_text("village_id,when,rain_mm,region\n")
    rc, _, err = run(capsys, "price", "--rainfall", str(bad),
                     "--contract", str(contract), "--out", str(tmp_path))
    assert rc == 2
    assert json.loads(err)["error"] == "SchemaError"


def test_missing_required_argument_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["fit-ols"])
    assert exc.value.code == 2


def test_console_script_runs(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("villages: 2\ntimes: 2\nhouseholds_per_village: 1\n"
                   "parcels_per_household: 1\nseed: 0\n")
    proc = subprocess.run(
        ["yieldrisk", "simulate", "--config", str(cfg), "--out", str(tmp_path),
         "--format", "json"],
        capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["kind"] == "panel"
    assert sys.executable   # environment sanity for the subprocess call
