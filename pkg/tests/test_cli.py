import json
import math
from pathlib import Path

import pytest

from tdchain import cli
from tdchain.config import ScenarioConfig

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture
def config(tmp_path):
    def make(**changes):
        d = ScenarioConfig(rng_seed=1, horizon_ticks=600).to_dict()
        d.update(changes)
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps(d))
        return p

    return make


def _lines(path):
    return [json.loads(x) for x in Path(path).read_text().splitlines()]


def test_run_writes_outputs(config, tmp_path, capsys):
    out = tmp_path / "out"
    assert cli.run(config(), out) == cli.EXIT_OK
    for name in ("metrics.json", "events.jsonl", "burn_log.csv", "rounds.jsonl", "transcripts.jsonl"):
        assert (out / name).stat().st_size > 0, name
    for fig in ("supply", "selections", "challenges"):
        assert (out / "figures" / f"{fig}.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["challenges"]["failed"] == 0
    assert "chain_length=" in capsys.readouterr().out


def test_bad_replication_rejected(config, tmp_path, capsys):
    assert cli.run(config(R=0), tmp_path / "out") == cli.EXIT_CONFIG
    assert "R must be ≥ 1" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_unknown_key_rejected(config, capsys):
    assert cli.validate(config(bogus=1)) == cli.EXIT_CONFIG
    assert "bogus" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert cli.validate(tmp_path / "nope.json") == cli.EXIT_CONFIG


def test_gamma_override(config, tmp_path):
    out = tmp_path / "out"
    assert cli.run(config(), out, overrides=["gamma=0.25"], figures=False) == cli.EXIT_OK
    rounds = [r for r in _lines(out / "rounds.jsonl") if r["block"]]
    assert rounds
    for r in rounds:
        assert r["burned"] == math.ceil(0.25 * (r["burned"] + r["returned"]))


def test_seed_flag_changes_run(config, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    cli.run(config(), a, seed=5, figures=False)
    cli.run(config(), b, seed=6, figures=False)
    assert (a / "events.jsonl").read_bytes() != (b / "events.jsonl").read_bytes()


def test_audit_round_trip(config, tmp_path, capsys):
    out = tmp_path / "out"
    cli.run(config(), out, figures=False)
    events = out / "events.jsonl"
    assert cli.audit(events) == cli.EXIT_OK
    lines = events.read_text().splitlines()
    drop = next(i for i, x in enumerate(lines)
                if json.loads(x)["kind"] == "mint" and json.loads(x)["token"] == "seed_bonus")
    events.write_text("\n".join(lines[:drop] + lines[drop + 1 :]) + "\n")
    capsys.readouterr()
    assert cli.audit(events) == cli.EXIT_INVARIANT
    assert "seed_bonus conservation" in capsys.readouterr().out


def test_audit_unreadable(tmp_path):
    bad = tmp_path / "events.jsonl"
    bad.write_text("{not json\n")
    assert cli.audit(bad) == cli.EXIT_CONFIG


def test_main_dispatch(config, tmp_path, capsys):
    assert cli.main(["validate", "-c", str(config())]) == 0
    assert "config ok" in capsys.readouterr().out
    out = tmp_path / "out"
    assert cli.main(["run", "-c", str(config()), "-o", str(out), "--no-figures", "--override", "k=3"]) == 0
    assert not (out / "figures").exists()
    assert cli.main(["audit", "-e", str(out / "events.jsonl")]) == 0
    with pytest.raises(SystemExit):
        cli.main(["run"])


@pytest.mark.parametrize("name", ["default.json", "adversarial.json"])
def test_shipped_configs_validate(name):
    assert cli.validate(ROOT / "configs" / name) == cli.EXIT_OK
