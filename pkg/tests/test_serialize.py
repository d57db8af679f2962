import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from emodel.model import PiecewiseConstant
from emodel.serialize import (ConfigError, LogFormatError, config_from_dict, config_hash, model_to_dict,
                              parse_config, read_event_log, stats_report, write_config, write_event_log)
from emodel.trajectory import EventRecord, Trajectory, run_ensemble
from emodel.zoo import builtin

SCALAR = {"sectors": [{"id": 0, "dim": 1}, {"id": 1, "dim": 1}],
          "jumps": [{"from": 0, "to": 1, "op": [[[1.0, 0.0]]]}]}


def test_minimal_config():
    cfg = config_from_dict(SCALAR)
    assert cfg.model.dim(0) == 1 and len(cfg.model.jumps) == 1
    assert cfg.init[0] == 0 and np.allclose(cfg.init[1], [1.0])


def test_diagonal_jump_rejected():
    raw = json.loads(json.dumps(SCALAR))
    raw["jumps"].append({"from": 1, "to": 1, "op": [[[1.0, 0.0]]]})
    with pytest.raises(ConfigError, match="diagonal jump"):
        config_from_dict(raw)


def test_builtin_grw():
    cfg = config_from_dict({"builtin": "grw_lattice", "params": {"M": 8, "sigma": 1, "lambda": 1, "J": 1}})
    assert cfg.model.sequence_reduced and len(cfg.model.channels_from(0)) == 8


def test_all_problems_reported():
    raw = {"sectors": [{"id": 0, "dim": 2}, {"id": 1, "dim": 1}],
           "hamiltonians": {"0": [[[0, 0], [1, 0]], [[0, 0], [0, 0]]], "7": [[[0, 0]]]},
           "jumps": [{"from": 0, "to": 5, "op": [[[1, 0]]]}, {"from": 0, "to": 1, "op": [[[1, 0], "x"]]}],
           "run": {"step": -1, "colour": 3}}
    with pytest.raises(ConfigError) as exc:
        config_from_dict(raw)
    text = " ".join(exc.value.problems)
    for bit in ("hamiltonians.7", "jumps[0]", "jumps[1]", "run.step", "run.colour"):
        assert bit in text


def test_model_errors_reported_together():
    raw = {"sectors": [{"id": 0, "dim": 2}, {"id": 1, "dim": 1}],
           "hamiltonians": {"0": [[[0, 0], [1, 0]], [[0, 0], [0, 0]]]},
           "jumps": [{"from": 1, "to": 1, "op": [[[1, 0]]]}]}
    with pytest.raises(ConfigError) as exc:
        config_from_dict(raw)
    assert len(exc.value.problems) == 2


def test_unreadable_and_malformed(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        parse_config(tmp_path / "missing.json")
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        parse_config(p)


def test_piecewise_and_run_block(tmp_path):
    raw = dict(SCALAR, hamiltonians={"0": {"breakpoints": [0.5], "matrices": [[[[1, 0]]], [[[2, 0]]]]}},
               run={"t_max": 3, "seed": 11, "trajectories": 7, "probe_times": [1, 2], "snapshot_states": True},
               initial={"sector": 0, "state": [[0, 2]]})
    cfg = config_from_dict(raw)
    assert isinstance(cfg.model.hamiltonians[0], PiecewiseConstant)
    assert cfg.run.seed == 11 and cfg.run.probe_times == [1.0, 2.0] and cfg.run.snapshot_states
    assert np.allclose(cfg.init[1], [1j])
    write_config(cfg, tmp_path / "c.json")
    assert parse_config(tmp_path / "c.json").hash == cfg.hash


def _bits(m):
    out = []
    for k in sorted(m.hamiltonians):
        p = m.hamiltonians[k]
        out += [x.tobytes() for x in getattr(p, "matrices", [getattr(p, "matrix", None)])]
    for j in m.jumps:
        out.append((j.source, j.target, j.label, j.op.matrix.tobytes()))
    return out


floats = st.floats(-1e150, 1e150, allow_nan=False, allow_infinity=False)


@settings(max_examples=50)
@given(st.lists(floats, min_size=4, max_size=4), st.lists(floats, min_size=12, max_size=12))
def test_round_trip_bit_exact(hv, gv):
    h = np.array([[hv[0], hv[1] + 1j * hv[2]], [hv[1] - 1j * hv[2], hv[3]]])
    g = (np.array(gv[:6]) + 1j * np.array(gv[6:])).reshape(3, 2)
    raw = {
        "sectors": [{"id": 0, "dim": 2}, {"id": 1, "dim": 3}],
        "hamiltonians": {"0": [[[z.real, z.imag] for z in row] for row in h]},
        "jumps": [{"from": 0, "to": 1, "op": [[[z.real, z.imag] for z in row] for row in g], "label": "e"},
                  {"from": 1, "to": 0, "op": [[[1, 0]] * 3] * 2}],
    }
    a = config_from_dict(raw)
    b = config_from_dict(json.loads(json.dumps(model_to_dict(a.model, a.init))))
    assert _bits(a.model) == _bits(b.model)
    assert np.array_equal(a.model.jumps[0].op.matrix, g)


def test_builtin_expands_to_identical_explicit_model():
    a = config_from_dict({"builtin": "noncommuting_spin", "params": {"sharpness": 0.8}})
    b = config_from_dict(json.loads(json.dumps(model_to_dict(a.model, a.init))))
    assert _bits(a.model) == _bits(b.model) and b.model.sequence_reduced


def test_config_hash_is_canonical():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})


def _traj(events):
    recs = [EventRecord(k + 1, t, 0, 1, "e") for k, t in enumerate(events)]
    return Trajectory(0, 0, 0, np.ones(1), recs, 0, np.ones(1), 5.0, "horizon")


def test_event_log_counts(tmp_path):
    p = tmp_path / "a.jsonl"
    assert write_event_log([_traj([]), _traj([])], p, "h", 3) == 0
    assert len(p.read_text().splitlines()) == 1
    assert write_event_log([_traj([0.5, 1.0, 2.5])], p, "h", 3) == 3
    lines = p.read_text().splitlines()
    assert len(lines) == 4
    assert json.loads(lines[0])["config_hash"] == "h" and json.loads(lines[0])["seed"] == 3
    assert [json.loads(x)["k"] for x in lines[1:]] == [1, 2, 3]


def test_event_log_deterministic(tmp_path):
    b = builtin("driven_qubit")
    paths = []
    for k in range(2):
        ens = run_ensemble(b.model, b.init, 200, t_max=5.0, seed=12, step=1e-2, snapshots=True)
        paths.append(tmp_path / f"{k}.jsonl")
        write_event_log(ens.trajectories, paths[-1], "x", 12)
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_stats_scalar_mean(tmp_path):
    b = builtin("two_sector_scalar")
    ens = run_ensemble(b.model, b.init, 100_000, t_max=1e4, seed=21, step=1e-2)
    p = tmp_path / "s.jsonl"
    write_event_log(ens.trajectories, p, "x", 21)
    rep = stats_report(p, tmp_path / "rep")
    assert len(rep["mean_inter_event"]) == 1
    assert rep["mean_inter_event"][0]["mean"] == pytest.approx(1.0, abs=0.01)
    assert rep["event_count_distribution"] == {"1": 100_000}
    assert (tmp_path / "rep" / "mean_inter_event.csv").read_text().count("\n") == 2


def test_stats_empty_log(tmp_path):
    p = tmp_path / "e.jsonl"
    p.write_text("")
    rep = stats_report(p, tmp_path / "rep")
    assert rep["events"] == 0 and rep["mean_inter_event"] == [] and rep["label_counts"] == {}
    assert (tmp_path / "rep" / "label_counts.csv").read_text() == "label,count\n"


def test_stats_grw_labels_uniform(tmp_path):
    b = builtin("grw_lattice", {"M": 8})
    ens = run_ensemble(b.model, b.init, 2000, t_max=5.0, seed=5, step=1e-2)
    p = tmp_path / "g.jsonl"
    write_event_log(ens.trajectories, p, "x", 5)
    counts = np.array(list(stats_report(p)["label_counts"].values()))
    assert len(counts) == 8
    n = counts.sum()
    sd = math.sqrt(n * (1 / 8) * (7 / 8))
    assert np.all(np.abs(counts - n / 8) <= 3 * sd)


def test_malformed_lines_reported(tmp_path):
    p = tmp_path / "m.jsonl"
    write_event_log([_traj([0.5, 1.0])], p, "x", 0)
    with open(p, "a") as fh:
        fh.write("not json\n")
        fh.write(json.dumps({"trajectory": 0, "k": "3"}) + "\n")
    with pytest.raises(LogFormatError) as exc:
        read_event_log(p)
    assert [s.split(":")[0] for s in exc.value.problems] == ["line 4", "line 5"]
