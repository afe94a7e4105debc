import json

import pytest
import yaml

from delay_kolmogorov.cli.config import load_run_config, parse_run_config
from delay_kolmogorov.cli.main import EXIT_CONFIG, EXIT_INCONCLUSIVE, EXIT_NUMERICAL, EXIT_OK, run
from delay_kolmogorov.errors import ConfigError


def _write_config(tmp_path, data, name="config.json"):
    path = tmp_path / name
    if name.endswith(".json"):
        path.write_text(json.dumps(data), encoding="utf-8")
    else:
        path.write_text(yaml.safe_dump(data, allow_unicode=True), encoding="utf-8")
    return path


@pytest.fixture
def lv_config(lv_params):
    return {
        "schema": 1,
        "model": {"name": "competitive_lv", "params": lv_params},
        "sim": {"horizon": 10.0, "seed": 42},
    }


@pytest.fixture
def sir_config(sir_params):
    return {
        "schema": 1,
        "model": {"name": "sir", "params": sir_params},
        "sim": {"horizon": 10.0, "seed": 42},
        "classify": {"basins": False},
    }


def test_simulate_end_to_end(tmp_path, lv_config):
    """simulate の出力（CSVとJSON）が揃い，同じ設定の再実行でバイト単位で一致することを確認する．"""
    config_path = _write_config(tmp_path, lv_config)

    # 1. 全種で積分
    assert run(["simulate", "--config", str(config_path), "--out", str(tmp_path / "a")]) == EXIT_OK
    csv_text = (tmp_path / "a" / "trajectory.csv").read_text(encoding="utf-8")
    assert csv_text.startswith("t,x1,x2\n")

    # 2. 設定のエコーは読み戻せる
    report = json.loads((tmp_path / "a" / "occupation.json").read_text(encoding="utf-8"))
    echoed = parse_run_config(report["config"])
    assert echoed.sim.dt == 1.0 / 64
    assert echoed.sim.seed == 42
    assert report["config"]["schema"] == 1
    assert report["occupation"]["labels"] == ["x1", "x2"]
    assert report["divergence"] == []

    # 3. 再実行で同一
    assert run(["simulate", "--config", str(config_path), "--out", str(tmp_path / "b")]) == EXIT_OK
    for name in ("trajectory.csv", "occupation.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_simulate_empty_face(tmp_path, lv_config):
    config_path = _write_config(tmp_path, lv_config)

    assert run(["simulate", "--config", str(config_path), "--out", str(tmp_path), "--face", ""]) == EXIT_OK

    rows = (tmp_path / "trajectory.csv").read_text(encoding="utf-8").strip().split("\n")[1:]
    assert rows
    for row in rows:
        assert row.split(",")[1:] == ["0", "0"]


def test_invasion_closed_form(tmp_path, sir_config):
    config_path = _write_config(tmp_path, sir_config)
    argv = ["invasion", "--config", str(config_path), "--out", str(tmp_path), "--closed-form"]

    assert run(argv + ["--face", "S", "--species", "I"]) == EXIT_OK

    report = json.loads((tmp_path / "invasion.json").read_text(encoding="utf-8"))
    assert report["lambda"] == pytest.approx(-0.5)
    assert report["method"] == "closed-form"
    assert report["face_label"] == "{S}"


def test_invasion_table_over_face(tmp_path, lv_config):
    lv_config["invasion"] = {"face": [], "closed_form": True}
    config_path = _write_config(tmp_path, lv_config)

    assert run(["invasion", "--config", str(config_path), "--out", str(tmp_path)]) == EXIT_OK

    report = json.loads((tmp_path / "invasion.json").read_text(encoding="utf-8"))
    assert [e["species_label"] for e in report["estimates"]] == ["x1", "x2"]
    assert all(e["lambda"] == pytest.approx(1.0) for e in report["estimates"])


def test_invasion_missing_closed_form_is_config_error(tmp_path, chemostat_params, capsys):
    config = {
        "schema": 1,
        "model": {"name": "chemostat", "params": chemostat_params},
        "sim": {"horizon": 10.0, "seed": 0},
    }
    config_path = _write_config(tmp_path, config)

    code = run(["invasion", "--config", str(config_path), "--out", str(tmp_path), "--closed-form", "--face", "S", "--species", "x1"])

    assert code == EXIT_CONFIG
    assert "閉じた式がありません" in capsys.readouterr().err


def test_classify_from_yaml(tmp_path, sir_config):
    config_path = _write_config(tmp_path, sir_config, name="config.yaml")

    assert run(["classify", "--config", str(config_path), "--out", str(tmp_path)]) == EXIT_OK

    report = json.loads((tmp_path / "regime.json").read_text(encoding="utf-8"))
    assert report["regime"] == "disease-extinct"
    assert report["basins"] is None
    assert report["branches"][0]["lambda"] == "λ_I(π_{S})"


def test_classify_strict_inconclusive(tmp_path, chemostat_params, capsys):
    config = {
        "schema": 1,
        "model": {"name": "chemostat", "params": chemostat_params},
        "sim": {"horizon": 1.0, "seed": 0},
        "classify": {"basins": False},
    }
    config_path = _write_config(tmp_path, config)
    argv = ["classify", "--config", str(config_path), "--out", str(tmp_path)]

    # --strict が無ければ inconclusive でも成功扱い
    assert run(argv) == EXIT_OK
    assert run(argv + ["--strict"]) == EXIT_INCONCLUSIVE
    assert "inconclusive" in capsys.readouterr().err


def test_divergence_exit_code(tmp_path, capsys):
    config = {
        "schema": 1,
        "model": {"name": "competitive_lv", "params": {"a": [5.0], "b": [[1.0]], "b_hat": [[0.0]], "sigma": [[0.01]]}},
        "sim": {"horizon": 10.0, "seed": 0, "divergence_ceiling": 1.0},
    }
    config_path = _write_config(tmp_path, config)

    assert run(["simulate", "--config", str(config_path), "--out", str(tmp_path)]) == EXIT_NUMERICAL
    assert capsys.readouterr().err.startswith("error:")
    report = json.loads((tmp_path / "occupation.json").read_text(encoding="utf-8"))
    assert report["divergence"][0]["species"] == "x1"


def test_unknown_key_is_rejected(tmp_path, lv_config, capsys):
    lv_config["sim"]["steps"] = 100
    config_path = _write_config(tmp_path, lv_config)

    assert run(["simulate", "--config", str(config_path), "--out", str(tmp_path)]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert err.startswith("error:")
    assert "steps" in err


def test_missing_config_file(tmp_path, capsys):
    assert run(["simulate", "--config", str(tmp_path / "nothing.json")]) == EXIT_CONFIG
    assert "見つかりません" in capsys.readouterr().err


def test_load_run_config_errors(tmp_path, lv_config):
    bad_yaml = tmp_path / "bad.yaml"
    bad_yaml.write_text("schema: [1\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="読めません"):
        load_run_config(bad_yaml)

    with pytest.raises(ConfigError, match="オブジェクト"):
        parse_run_config([lv_config])

    with pytest.raises(ConfigError, match="設定が不正"):
        parse_run_config(dict(lv_config, schema=2))


def test_audit_with_certificate(tmp_path, lv_config):
    lv_config["audit"] = {
        "certificate": {
            "c": [1.0, 1.0],
            "gamma_b": 0.01,
            "gamma_0": 0.01,
            "a0": 1.0,
            "a1": 0.5,
            "a2": 0.25,
            "m": 10.0,
            "growth": {"kind": "a", "k_tilde": 10.0},
        },
        "checks": ["drift", "growth", "nondegeneracy", "lipschitz"],
        "sampler": {"samples": 50, "radius": 20.0},
    }
    config_path = _write_config(tmp_path, lv_config)

    assert run(["audit", "--config", str(config_path), "--out", str(tmp_path)]) == EXIT_OK

    report = json.loads((tmp_path / "audit.json").read_text(encoding="utf-8"))
    assumptions = [r["assumption"] for r in report["reports"]]
    assert assumptions == ["drift-condition", "growth-condition-a", "nondegeneracy", "local-lipschitz"]
    assert report["certificate"]["m"] == 10
    assert "search" not in report


def test_audit_searches_certificate(tmp_path, lv_config):
    lv_config["audit"] = {"checks": ["drift"], "sampler": {"samples": 50, "radius": 20.0}}
    config_path = _write_config(tmp_path, lv_config)

    assert run(["audit", "--config", str(config_path), "--out", str(tmp_path)]) == EXIT_OK

    report = json.loads((tmp_path / "audit.json").read_text(encoding="utf-8"))
    assert report["search"]["certificate"] is not None
    assert report["reports"][0]["violations"] == 0


def test_audit_bad_certificate(tmp_path, lv_config, capsys):
    lv_config["audit"] = {"certificate": {"c": [1.0, 1.0], "gamma_b": 0.01, "gamma_0": 0.01, "a0": 1.0, "a1": 0.2, "a2": 0.5, "m": 1.0}}
    config_path = _write_config(tmp_path, lv_config)

    assert run(["audit", "--config", str(config_path), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "A_1 > A_2" in capsys.readouterr().err


def test_classify_initial_on_boundary_is_config_error(tmp_path, lv_config, capsys):
    lv_config["classify"] = {"initial": [1.0, 0.0]}
    config_path = _write_config(tmp_path, lv_config)

    assert run(["classify", "--config", str(config_path), "--out", str(tmp_path)]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert err.startswith("error:")
    assert "全種が正" in err
    assert "Traceback" not in err


def test_lyapunov_exponent_for_face_species_is_config_error(tmp_path, lv_config, capsys):
    lv_config["invasion"] = {"face": ["x1"], "species": "x1", "method": "lyapunov-exponent"}
    config_path = _write_config(tmp_path, lv_config)

    assert run(["invasion", "--config", str(config_path), "--out", str(tmp_path)]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert err.startswith("error:")
    assert "含まれています" in err


def test_invasion_all_diverged_exit_code(tmp_path, capsys):
    params = {"a": [5.0, 5.0], "b": [[1.0, 0.0], [0.0, 1.0]], "b_hat": [[0.0, 0.0], [0.0, 0.0]], "sigma": [[0.01, 0.0], [0.0, 0.01]]}
    config = {
        "schema": 1,
        "model": {"name": "competitive_lv", "params": params},
        "sim": {"horizon": 10.0, "seed": 0, "divergence_ceiling": 1.0},
        "invasion": {"face": ["x1"], "species": "x2"},
    }
    config_path = _write_config(tmp_path, config)

    assert run(["invasion", "--config", str(config_path), "--out", str(tmp_path)]) == EXIT_NUMERICAL
    assert "発散" in capsys.readouterr().err
    # 結果は書き出してから終了する
    report = json.loads((tmp_path / "invasion.json").read_text(encoding="utf-8"))
    assert "all replicates diverged" in report["flags"]


def test_closed_form_can_be_turned_off(tmp_path, sir_config):
    config_path = _write_config(tmp_path, sir_config)

    assert run(["classify", "--config", str(config_path), "--out", str(tmp_path), "--no-closed-form"]) == EXIT_OK
    report = json.loads((tmp_path / "regime.json").read_text(encoding="utf-8"))
    assert {e["method"] for e in report["lambda_table"]} == {"time-average"}

    sir_config["invasion"] = {"face": ["S"], "species": "I", "closed_form": True}
    config_path = _write_config(tmp_path, sir_config)
    assert run(["invasion", "--config", str(config_path), "--out", str(tmp_path), "--no-closed-form"]) == EXIT_OK
    report = json.loads((tmp_path / "invasion.json").read_text(encoding="utf-8"))
    assert report["method"] == "time-average"
