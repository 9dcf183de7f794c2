import csv
import dataclasses
import io
import json

import pytest

from cpselect.cli import main
from cpselect.fusion import save_detections, synthesize_detections
from cpselect.comms import stream
from cpselect.scenario import generate_scenario, load_scenario, save_scenario

SMALL = "repetitions: 2\nrandom_draws: 5\nbeta_grid: [0.0, 0.4]\nga: {population_size: 16, generations: 10}\n"


@pytest.fixture
def scen_file(tmp_path):
    p = tmp_path / "s.yaml"
    assert main(["gen", "--seed", "4", "--out", str(p)]) == 0
    return p


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "exp.yaml"
    p.write_text(SMALL)
    return p


def read_csv(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_gen_writes_loadable_scenario(scen_file):
    assert load_scenario(scen_file) == generate_scenario(4)


def test_gen_json_to_stdout(capsys):
    assert main(["gen", "--seed", "1", "--format", "json", "--n-candidates", "5"]) == 0
    assert len(json.loads(capsys.readouterr().out)["candidates"]) == 5


@pytest.mark.parametrize("policy", ["ga", "oracle", "closest", "slowest"])
def test_select(scen_file, capsys, policy):
    assert main(["select", str(scen_file), "--policy", policy]) == 0
    (row,) = read_csv(capsys.readouterr().out)
    assert row["method"] == policy
    assert len(row["selected"].split()) <= 3


def test_select_json(scen_file, capsys):
    assert main(["select", str(scen_file), "--policy", "oracle", "--format", "json"]) == 0
    assert json.loads(capsys.readouterr().out)[0]["evaluations"] == 176


def test_allocate_with_helpers(scen_file, tmp_path):
    s = load_scenario(scen_file)
    ok = [i for i, v in enumerate(s.candidates) if v.mean_delay <= s.comms.delay_threshold][:2]
    out = tmp_path / "plan.json"
    args = ["allocate", str(scen_file), "--policy", "optimal", "--helpers", ",".join(map(str, ok)),
            "--format", "json", "--out", str(out)]
    assert main(args) == 0
    plan = json.loads(out.read_text())
    assert sum(r["rb_count"] for r in plan["allocation"]) == s.comms.total_rb_count


def test_allocate_infeasible_exit_code(scen_file, tmp_path):
    s = load_scenario(scen_file)
    late = s.with_candidates(dataclasses.replace(v, mean_delay=1.0) for v in s.candidates)
    p = tmp_path / "late.yaml"
    save_scenario(late, p)
    assert main(["allocate", str(p), "--helpers", "0,1"]) == 2


def test_allocate_bad_helper_index(scen_file):
    assert main(["allocate", str(scen_file), "--helpers", "0,42"]) == 1


def test_sweep_single_scenario(scen_file, capsys):
    assert main(["sweep", "--scenario", str(scen_file), "--grid", "0,0.5"]) == 0
    rows = read_csv(capsys.readouterr().out)
    assert {r["policy"] for r in rows} == {"optimal", "proportional", "uniform", "random"}
    assert len(rows) == 8


def test_sweep_batch(cfg_file, capsys):
    assert main(["sweep", "--config", str(cfg_file)]) == 0
    assert len(read_csv(capsys.readouterr().out)) == 8


def test_sweep_grid_out_of_domain(scen_file):
    assert main(["sweep", "--scenario", str(scen_file), "--grid", "0,1.0"]) == 1


def test_fuse_batch(cfg_file, capsys):
    assert main(["fuse", "--config", str(cfg_file), "--perfect"]) == 0
    rows = read_csv(capsys.readouterr().out)
    assert {r["param"] for r in rows} == {"perfect"}


def test_fuse_with_detection_file(scen_file, tmp_path, cfg_file, capsys):
    s = load_scenario(scen_file)
    det = tmp_path / "d.jsonl"
    save_detections(synthesize_detections(s, stream(4, 1)).values(), det)
    assert main(["fuse", "--config", str(cfg_file), "--scenario", str(scen_file), "--detections", str(det)]) == 0
    rows = read_csv(capsys.readouterr().out)
    assert [r["policy"] for r in rows] == ["ego", "ga", "random", "closest", "farthest"]


def test_fuse_missing_detection_file(scen_file, tmp_path):
    assert main(["fuse", "--scenario", str(scen_file), "--detections", str(tmp_path / "none.jsonl")]) == 3


def test_bench_out_file(cfg_file, tmp_path):
    out = tmp_path / "bench.csv"
    assert main(["bench", "--config", str(cfg_file), "--out", str(out)]) == 0
    experiments = {r["experiment"] for r in read_csv(out.read_text())}
    assert experiments == {"selection", "allocation", "fusion"}


def test_bench_json(cfg_file, capsys):
    assert main(["bench", "--config", str(cfg_file), "--repetitions", "1", "--format", "json"]) == 0
    assert all(r["n"] == 1 for r in json.loads(capsys.readouterr().out))


def test_config_from_environment_dir(tmp_path, monkeypatch, capsys):
    (tmp_path / "default.yaml").write_text(SMALL + "selection_policies: [closest]\n"
                                           "allocation_policies: []\nfusion_policies: []\n")
    monkeypatch.setenv("CPSELECT_CONFIG_DIR", str(tmp_path))
    assert main(["bench"]) == 0
    assert {r["policy"] for r in read_csv(capsys.readouterr().out)} == {"closest"}


@pytest.mark.parametrize("args,code", [
    (["select", "/nonexistent/s.yaml"], 3),
    (["bench", "--config", "/nonexistent/c.yaml"], 3),
    (["select"], 1),
    (["bench", "--format", "xml"], 1),
    (["frobnicate"], 1),
])
def test_error_exit_codes(args, code):
    assert main(args) == code


def test_invalid_scenario_is_config_error(scen_file, tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text(scen_file.read_text().replace("max_helpers: 3", "max_helpers: 0"))
    assert main(["select", str(p)]) == 1


def test_bad_config_value(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("repetitions: -1\n")
    assert main(["bench", "--config", str(p)]) == 1


def test_unwritable_output(scen_file):
    assert main(["select", str(scen_file), "--out", "/nonexistent/dir/out.csv"]) == 3
