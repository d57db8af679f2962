"""JSON configuration, JSON-Lines event logs and statistics tables.

Config layout::

    {"builtin": "grw_lattice", "params": {"M": 8, "sigma": 1, "lambda": 1, "J": 1},
     "run": {"t_max": 2.0, "seed": 1, "trajectories": 1000}}

or an explicit model::

    {"sectors": [{"id": 0, "dim": 1}, {"id": 1, "dim": 1}],
     "hamiltonians": {"0": [[[0, 0]]]},
     "jumps": [{"from": 0, "to": 1, "op": [[[1, 0]]], "label": "fire"}],
     "initial": {"sector": 0, "state": [[1, 0]]},
     "run": {...}}

Matrices are row lists of ``[re, im]`` pairs (a bare number is read as a
real entry).  A piecewise-constant operator is
``{"breakpoints": [...], "matrices": [...]}``.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .model import (Constant, EventModel, HistoryDependent, ModelError, PiecewiseConstant, SectorSpec,
                    validate_model)
from .propagator import DEFAULT_STEP
from .trajectory import DEFAULT_EVENT_BUDGET
from .zoo import builtin

LOG_FORMAT = "emodel-events/1"


class ConfigError(ValueError):
    """Unreadable or invalid configuration; ``problems`` lists every violation found."""

    def __init__(self, problems):
        self.problems = [problems] if isinstance(problems, str) else list(problems)
        super().__init__("; ".join(self.problems))


class LogFormatError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class RunConfig:
    t0: float = 0.0
    t_max: float = 1.0
    step: float = DEFAULT_STEP
    seed: int = 0
    trajectories: int = 1000
    event_budget: int = DEFAULT_EVENT_BUDGET
    probe_times: list = field(default_factory=list)
    snapshot_states: bool = False

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class ModelConfig:
    raw: dict
    model: EventModel
    init: tuple
    run: RunConfig

    @property
    def hash(self) -> str:
        return config_hash(self.raw)


# -- matrices -----------------------------------------------------------------------


def encode_matrix(m) -> list:
    m = np.asarray(m, dtype=complex)
    return [[[float(z.real), float(z.imag)] for z in row] for row in m]


def encode_vector(v) -> list:
    return [[float(z.real), float(z.imag)] for z in np.asarray(v, dtype=complex)]


def _entry(x, where):
    if isinstance(x, bool):
        raise ConfigError(f"{where}: boolean is not a number")
    if isinstance(x, (int, float)):
        return complex(float(x), 0.0)
    if isinstance(x, list) and len(x) == 2 and all(isinstance(y, (int, float)) and not isinstance(y, bool)
                                                   for y in x):
        return complex(float(x[0]), float(x[1]))
    raise ConfigError(f"{where}: entries must be [re, im] pairs")


def decode_matrix(data, where="matrix") -> np.ndarray:
    if not isinstance(data, list) or not data or not all(isinstance(r, list) and r for r in data):
        raise ConfigError(f"{where}: expected a non-empty list of rows")
    if len({len(r) for r in data}) != 1:
        raise ConfigError(f"{where}: rows have different lengths")
    out = np.array([[_entry(x, where) for x in row] for row in data], dtype=complex)
    if not np.all(np.isfinite(out)):
        raise ConfigError(f"{where}: non-finite entry")
    return out


def decode_vector(data, where="state") -> np.ndarray:
    if not isinstance(data, list) or not data:
        raise ConfigError(f"{where}: expected a non-empty list")
    return np.array([_entry(x, where) for x in data], dtype=complex)


def _decode_provider(data, where):
    if isinstance(data, dict):
        if set(data) != {"breakpoints", "matrices"}:
            raise ConfigError(f"{where}: a piecewise operator needs exactly 'breakpoints' and 'matrices'")
        mats = [decode_matrix(x, f"{where}.matrices[{i}]") for i, x in enumerate(data["matrices"])]
        try:
            return PiecewiseConstant(data["breakpoints"], mats)
        except (ModelError, ValueError, TypeError) as exc:
            raise ConfigError(f"{where}: {exc}") from None
    return Constant(decode_matrix(data, where))


def _encode_provider(p):
    if isinstance(p, Constant):
        return encode_matrix(p.matrix)
    if isinstance(p, PiecewiseConstant):
        return {"breakpoints": list(p.breakpoints), "matrices": [encode_matrix(x) for x in p.matrices]}
    if isinstance(p, HistoryDependent):
        raise ConfigError("history-dependent operators cannot be written to a config")
    raise ConfigError(f"unknown provider {type(p).__name__}")


# -- config -------------------------------------------------------------------------


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(raw: dict) -> str:
    return hashlib.sha256(canonical_json(raw).encode()).hexdigest()


_TOP = {"builtin", "params", "sectors", "hamiltonians", "jumps", "initial", "run", "name", "sequence_reduced"}


def _parse_run(data, problems) -> RunConfig:
    rc = RunConfig()
    if data is None:
        return rc
    if not isinstance(data, dict):
        problems.append("run: expected an object")
        return rc
    names = {f.name for f in fields(RunConfig)}
    for k, v in data.items():
        if k not in names:
            problems.append(f"run.{k}: unknown key")
            continue
        try:
            if k in ("seed", "trajectories", "event_budget"):
                if isinstance(v, bool) or int(v) != v:
                    raise ValueError
                v = int(v)
            elif k == "probe_times":
                v = [float(x) for x in v]
            elif k == "snapshot_states":
                if not isinstance(v, bool):
                    raise ValueError
            else:
                v = float(v)
        except (TypeError, ValueError):
            problems.append(f"run.{k}: bad value {v!r}")
            continue
        setattr(rc, k, v)
    if not rc.step > 0:
        problems.append("run.step: must be positive")
    if not rc.t_max >= rc.t0 or not math.isfinite(rc.t_max):
        problems.append("run.t_max: must be finite and not before t0")
    if rc.trajectories < 1:
        problems.append("run.trajectories: must be at least 1")
    if rc.event_budget < 0:
        problems.append("run.event_budget: must be non-negative")
    if not 0 <= rc.seed < 2**64:
        problems.append("run.seed: must be an unsigned 64-bit integer")
    if any(not rc.t0 <= p <= rc.t_max for p in rc.probe_times):
        problems.append("run.probe_times: must lie in [t0, t_max]")
    return rc


def _parse_explicit(raw, problems):
    secs = raw.get("sectors")
    if not isinstance(secs, list) or not secs:
        problems.append("sectors: expected a non-empty list")
        return None, None
    specs = []
    for i, s in enumerate(secs):
        if not isinstance(s, dict) or not isinstance(s.get("id"), int) or not isinstance(s.get("dim"), int):
            problems.append(f"sectors[{i}]: needs integer 'id' and 'dim'")
            continue
        specs.append(SectorSpec(s["id"], s["dim"], str(s.get("label", ""))))
    ids = {s.id for s in specs}
    hams = {}
    for k, v in (raw.get("hamiltonians") or {}).items():
        try:
            sid = int(k)
        except ValueError:
            problems.append(f"hamiltonians.{k}: key must be a sector id")
            continue
        if sid not in ids:
            problems.append(f"hamiltonians.{k}: unknown sector")
            continue
        try:
            hams[sid] = _decode_provider(v, f"hamiltonians.{k}")
        except ConfigError as exc:
            problems += exc.problems
    jumps = []
    for i, j in enumerate(raw.get("jumps") or []):
        if not isinstance(j, dict) or not {"from", "to", "op"} <= set(j):
            problems.append(f"jumps[{i}]: needs 'from', 'to' and 'op'")
            continue
        if j["from"] not in ids or j["to"] not in ids:
            problems.append(f"jumps[{i}]: references an unknown sector")
            continue
        try:
            jumps.append((j["from"], j["to"], _decode_provider(j["op"], f"jumps[{i}].op"), j.get("label")))
        except ConfigError as exc:
            problems += exc.problems
    if problems:
        return None, None
    try:
        m = EventModel(specs, hams, jumps, name=str(raw.get("name", "")),
                       sequence_reduced=bool(raw.get("sequence_reduced", False)))
    except (ModelError, ValueError, IndexError) as exc:
        problems.append(str(exc))
        return None, None
    init = raw.get("initial")
    if init is None:
        psi = np.zeros(m.dim(0), dtype=complex)
        psi[0] = 1.0
        return m, (0, psi)
    try:
        sector = int(init["sector"])
        psi = decode_vector(init["state"], "initial.state")
    except ConfigError as exc:
        problems += exc.problems
        return m, None
    except (KeyError, TypeError, ValueError):
        problems.append("initial: needs 'sector' and 'state'")
        return m, None
    return m, (sector, psi)


def config_from_dict(raw: dict) -> ModelConfig:
    """Build and validate the model; raise :class:`ConfigError` listing every problem."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    problems = [f"{k}: unknown key" for k in raw if k not in _TOP]
    run = _parse_run(raw.get("run"), problems)
    model, init = None, None
    if "builtin" in raw:
        extra = [k for k in ("sectors", "hamiltonians", "jumps") if k in raw]
        if extra:
            problems.append(f"builtin configs cannot also give {extra}")
        try:
            b = builtin(raw["builtin"], raw.get("params") or {})
            model, init = b.model, b.init
        except ModelError as exc:
            problems.append(str(exc))
        if "initial" in raw and model is not None:
            try:
                init = (int(raw["initial"]["sector"]), decode_vector(raw["initial"]["state"], "initial.state"))
            except ConfigError as exc:
                problems += exc.problems
            except (KeyError, TypeError, ValueError):
                problems.append("initial: needs 'sector' and 'state'")
    else:
        model, init = _parse_explicit(raw, problems)
    if model is not None:
        problems += validate_model(model).violations
        if init is not None and not problems:
            sector, psi = init
            if sector not in model.sector_ids or psi.shape != (model.dim(sector),):
                problems.append("initial: state does not match the sector dimension")
            elif not np.linalg.norm(psi) > 0:
                problems.append("initial: zero state")
            else:
                init = (sector, psi / np.linalg.norm(psi))
    if problems:
        raise ConfigError(problems)
    return ModelConfig(copy.deepcopy(raw), model, init, run)


def parse_config(path) -> ModelConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(raw)


def model_to_dict(m: EventModel, init=None, run: RunConfig | None = None) -> dict:
    """Explicit config for ``m``; parsing it gives back the same matrices bit for bit."""
    out = {
        "name": m.name,
        "sectors": [{"id": s.id, "dim": s.dim, "label": s.label} for s in m.sectors],
        "hamiltonians": {str(k): _encode_provider(p) for k, p in m.hamiltonians.items()},
        "jumps": [{"from": j.source, "to": j.target, "op": _encode_provider(j.op), "label": j.label}
                  for j in m.jumps],
        "sequence_reduced": m.sequence_reduced,
    }
    if init is not None:
        out["initial"] = {"sector": int(init[0]), "state": encode_vector(init[1])}
    if run is not None:
        out["run"] = run.as_dict()
    return out


def write_config(cfg: ModelConfig | dict, path) -> None:
    raw = cfg.raw if isinstance(cfg, ModelConfig) else cfg
    Path(path).write_text(json.dumps(raw, indent=2, allow_nan=False) + "\n")


# -- event logs ---------------------------------------------------------------------


def _event_line(i, ev) -> dict:
    d = {"trajectory": i, "k": ev.index, "time": ev.time, "from": ev.source, "to": ev.target, "label": ev.label}
    if ev.state is not None:
        d["state"] = encode_vector(ev.state)
    return d


def write_event_log(trajectories, path, config_digest: str = "", seed: int = 0, t0: float = 0.0) -> int:
    """Write a header and one line per event ordered by (trajectory, k); return the event count."""
    trajectories = list(trajectories)
    header = {"format": LOG_FORMAT, "config_hash": config_digest, "seed": int(seed),
              "trajectories": len(trajectories), "t0": float(t0)}
    n = 0
    with open(path, "w", newline="\n") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for i, tr in enumerate(trajectories):
            for ev in tr.events:
                fh.write(json.dumps(_event_line(i, ev), sort_keys=True) + "\n")
                n += 1
    return n


_EVENT_KEYS = {"trajectory": int, "k": int, "time": (int, float), "from": int, "to": int}


def read_event_log(path):
    """Return ``(header, events)``; every malformed line is reported with its number."""
    header = None
    events = []
    problems = []
    with open(path) as fh:
        for no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                problems.append(f"line {no}: invalid JSON ({exc.msg})")
                continue
            if not isinstance(obj, dict):
                problems.append(f"line {no}: expected an object")
                continue
            if header is None and "format" in obj:
                header = obj
                continue
            bad = [k for k, tp in _EVENT_KEYS.items() if not isinstance(obj.get(k), tp) or isinstance(obj.get(k), bool)]
            if bad:
                problems.append(f"line {no}: missing or invalid {', '.join(bad)}")
                continue
            events.append((no, obj))
    prev = None
    for no, e in events:
        key = (e["trajectory"], e["k"])
        if prev is not None and key <= prev[0]:
            problems.append(f"line {no}: event out of order")
        elif prev is not None and key[0] == prev[0][0] and not e["time"] > prev[1]:
            problems.append(f"line {no}: time does not increase")
        prev = (key, e["time"])
    if problems:
        raise LogFormatError(problems)
    return header or {}, [e for _, e in events]


def stats_report(path, out_dir=None) -> dict:
    """Inter-event statistics of an event log; with ``out_dir`` also write JSON and CSV files."""
    header, events = read_event_log(path)
    t0 = float(header.get("t0", 0.0))
    n_traj = int(header.get("trajectories", 1 + max((e["trajectory"] for e in events), default=-1)))
    series: dict[int, list[float]] = {}
    last: dict[int, float] = {}
    labels: dict[str, int] = {}
    for e in events:
        i = e["trajectory"]
        series.setdefault(i, []).append(e["time"] - last.get(i, t0))
        last[i] = e["time"]
        lab = str(e.get("label"))
        labels[lab] = labels.get(lab, 0) + 1
    counts = np.zeros(n_traj, dtype=int)
    for i, s in series.items():
        if i < n_traj:
            counts[i] = len(s)
    depth = max((len(s) for s in series.values()), default=0)
    mean_rows = []
    for k in range(depth):
        x = np.array([s[k] for s in series.values() if len(s) > k])
        se = float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else float("nan")
        mean_rows.append({"k": k + 1, "n": len(x), "mean": float(x.mean()), "stderr": se})
    hist = np.bincount(counts) if n_traj else np.zeros(0, dtype=int)
    report = {
        "config_hash": header.get("config_hash", ""),
        "seed": header.get("seed"),
        "trajectories": n_traj,
        "events": len(events),
        "mean_inter_event": mean_rows,
        "label_counts": dict(sorted(labels.items())),
        "event_count_distribution": {str(k): int(v) for k, v in enumerate(hist) if v},
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")
        _csv(out / "mean_inter_event.csv", ["k", "n", "mean", "stderr"],
             [[r["k"], r["n"], r["mean"], r["stderr"]] for r in mean_rows])
        _csv(out / "inter_event_times.csv", ["trajectory", "k", "dt"],
             [[i, k + 1, dt] for i in sorted(series) for k, dt in enumerate(series[i])])
        _csv(out / "label_counts.csv", ["label", "count"], [[k, v] for k, v in report["label_counts"].items()])
        _csv(out / "event_counts.csv", ["events", "trajectories"],
             [[int(k), v] for k, v in report["event_count_distribution"].items()])
    return report


def _csv(path, head, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(head)
        w.writerows(rows)


def write_density_csv(path, times, densities) -> None:
    """Long-format table ``t, sector, row, col, re, im`` of probe densities."""
    rows = []
    for t, d in zip(times, densities):
        for s, b in sorted(d.blocks.items()):
            for (i, j), z in np.ndenumerate(b):
                rows.append([repr(float(t)), s, i, j, repr(float(z.real)), repr(float(z.imag))])
    _csv(path, ["t", "sector", "row", "col", "re", "im"], rows)
