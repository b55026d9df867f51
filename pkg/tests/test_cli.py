import json
import os

import pytest

from abcem import cli
from abcem.cli import ConfigError, PRESETS, config_to_json, expand_preset, main, parse_config, \
    write_outputs
from abcem.experiments import EXPERIMENTS, run_experiment
from abcem.rng import InvalidParameterError


def test_parse_preset_example():
    c = parse_config('{"preset":"fw-basic","experiment":"fw_run","steps":20000,"seed":1,"runs":1}')
    p = c.fw_params()
    assert (p.phi, p.chi, p.nu, p.mu) == (0.18, 2.3, 0.05, 0.01)
    assert c.steps == 20000 and c.seed == 1 and c.runs == 1


def test_parse_override_example():
    c = parse_config('{"preset":"fw-basic","override":{"sigma_f":1.15,"dt":0.1}}')
    p = c.fw_params()
    assert p.sigma_f == 1.15 and p.dt == 0.1 and p.sigma_c == 1.9 and p.alpha_h == 1.3


def test_missing_experiment_is_an_error():
    with pytest.raises(ConfigError, match="experiment"):
        parse_config('{"seed": 3}')


@pytest.mark.parametrize("text,key", [('{"experiment":"fw_run","sede":1}', "sede"),
                                      ('{"experiment":"fw_run","steps":1.5}', "steps"),
                                      ('{"experiment":"fw_run","scheme":"rk"}', "scheme"),
                                      ('{"preset":"zz"}', "preset"),
                                      ('{"experiment":"fw_run","sweep":{"dt":1}}', "sweep.dt")])
def test_parse_errors_name_the_key(text, key):
    with pytest.raises(ConfigError, match=key):
        parse_config(text)


def test_invariant_violation_is_a_validation_error():
    with pytest.raises(InvalidParameterError):
        parse_config('{"experiment":"lls_run","override":{"interest_rate":2.0}}')
    with pytest.raises(ConfigError):
        parse_config("[1, 2]")


@pytest.mark.parametrize("name", list(PRESETS))
def test_preset_round_trip(name):
    c = expand_preset(name)
    assert parse_config(config_to_json(c)) == c


def test_preset_tables():
    lls3 = expand_preset("lls-3agents").lls_params()
    assert lls3.num_agents == 99 and lls3.total_shares == 9900
    assert sorted(set(lls3.memories())) == [10, 141, 256]
    assert expand_preset("lls-basic").lls_params().memory_spec == 15


def test_horizon_replaces_preset_steps():
    c = parse_config('{"preset":"lls-basic","horizon":200,"dt":0.1}')
    assert c.steps is None and c.steps_for(0.1) == 2000


def test_write_outputs_layout_and_determinism(tmp_path):
    c = parse_config('{"experiment":"lls_run","steps":30,"seed":4}')
    a, b = tmp_path / "a", tmp_path / "b"
    write_outputs(run_experiment(c), str(a), c)
    write_outputs(run_experiment(c), str(b), c)
    names = sorted(os.listdir(a))
    assert names == ["lls_run.csv", "metadata.json"]
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes()
    assert (a / "lls_run.csv").read_text().splitlines()[0] == "t,S,Z,mean_w,boundary_frac"
    meta = json.loads((a / "metadata.json").read_text())
    assert meta["seeds"] == [[4, 0]] and meta["warmup_steps"] == 3
    assert "code_version" in meta and meta["config"]["steps"] == 30


def test_blowup_run_output(tmp_path):
    c = parse_config('{"experiment":"fw_run","override":{"sigma_f":1.15},"steps":20000,'
                     '"seed":1,"runs":40}')
    res = run_experiment(c)
    bad = [k for k, s in enumerate(res.first_bad_step) if s is not None]
    assert bad
    write_outputs(res, str(tmp_path), c)
    meta = json.loads((tmp_path / "metadata.json").read_text())
    k = bad[0]
    assert meta["result"]["first_bad_step"][k] == res.first_bad_step[k]
    lines = (tmp_path / f"fw_run_{k:04d}.csv").read_text().splitlines()
    assert len(lines) - 1 == res.first_bad_step[k]


def test_failed_write_leaves_nothing(tmp_path, monkeypatch):
    c = parse_config('{"experiment":"fw_run","steps":10}')
    res = run_experiment(c)
    real = os.fdopen
    calls = []

    def flaky(fd, *a, **kw):
        calls.append(fd)
        if len(calls) == 2:
            os.close(fd)
            raise OSError("disk full")
        return real(fd, *a, **kw)

    monkeypatch.setattr(cli.os, "fdopen", flaky)
    with pytest.raises(OSError, match=str(tmp_path)):
        write_outputs(res, str(tmp_path), c)
    assert os.listdir(tmp_path) == []


def test_main_subcommands(tmp_path, capsys):
    assert main(["list"]) == 0
    out = capsys.readouterr().out
    assert all(name in out for name in EXPERIMENTS) and "lls-3agents" in out
    assert main(["preset", "fw-basic"]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["override"]["phi"] == 0.18 and printed["override"]["chi"] == 2.3
    assert main(["preset", "nope"]) == 1
    assert main(["run", str(tmp_path / "missing.json")]) == 2
    cfg = tmp_path / "c.json"
    cfg.write_text('{"experiment":"fw_run","sede":2}')
    assert main(["run", str(cfg)]) == 1
    # returns far below -100% make log utility undefined at the first step
    cfg.write_text('{"experiment":"lls_run","override":{"history_init_mean":-5.0},"steps":5}')
    capsys.readouterr()
    assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "DegenerateHistoryError" in capsys.readouterr().err
    cfg.write_text('{"experiment":"fw_run","steps":5}')
    assert main(["run", str(cfg), "--out", str(tmp_path / "ok")]) == 0
    assert (tmp_path / "ok" / "fw_run.csv").exists()
