"""File formats: demonstration CSV, model JSON and trace export.

Demonstration CSV columns are ``demo, t, in_0 .. in_{D_I-1}, out_0 .. out_{D_O-1}``.
Rows sharing a ``demo`` id form one demonstration, kept in file order.
"""

from __future__ import annotations

import csv
import json
import re
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kmp
from .errors import ParseError, ValidationError
from .gmm import Demonstration, ReferenceTrajectory
from .simulator import ScenarioConfig, TraceRecord

MODEL_VERSION = 1
_IN = re.compile(r"in_(\d+)$")
_OUT = re.compile(r"out_(\d+)$")


def _header_dims(header: list[str]) -> tuple[int, int]:
    names = [h.strip() for h in header]
    if len(names) < 4 or names[0] != "demo" or names[1] != "t":
        raise ParseError("header must start with 'demo,t' followed by in_* and out_* columns",
                         line=1)
    d_in = d_out = 0
    for name in names[2:]:
        if _IN.match(name) and d_out == 0:
            if int(_IN.match(name).group(1)) != d_in:
                raise ParseError(f"expected column in_{d_in}, found {name!r}", line=1)
            d_in += 1
        elif _OUT.match(name):
            if int(_OUT.match(name).group(1)) != d_out:
                raise ParseError(f"expected column out_{d_out}, found {name!r}", line=1)
            d_out += 1
        else:
            raise ParseError(f"unexpected column {name!r}", line=1)
    if d_in == 0 or d_out == 0:
        raise ParseError("header needs at least one in_* and one out_* column", line=1)
    return d_in, d_out


def parse_demonstrations(path) -> list[Demonstration]:
    """Read demonstrations from a CSV file (format in the module docstring)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError("file is empty; missing header", line=1)
        d_in, d_out = _header_dims(header)
        width = 2 + d_in + d_out
        groups: dict[int, list[list[float]]] = {}
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != width:
                raise ParseError(f"expected {width} fields, found {len(row)}", line=line)
            try:
                values = [float(c) for c in row]
            except ValueError:
                bad = next(c for c in row if not _is_float(c))
                raise ParseError(f"non-numeric cell {bad!r}", line=line) from None
            if not np.all(np.isfinite(values)):
                raise ParseError("non-finite value", line=line)
            if values[0] != int(values[0]):
                raise ParseError(f"demo id {row[0]!r} is not an integer", line=line)
            groups.setdefault(int(values[0]), []).append(values[1:])
    if not groups:
        raise ParseError("no data rows after header", line=2)
    demos = []
    for demo_id, rows in groups.items():
        arr = np.asarray(rows)
        demos.append(Demonstration(arr[:, 1:1 + d_in], arr[:, 1 + d_in:], times=arr[:, 0],
                                   demo_id=demo_id))
    return demos


def _is_float(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def write_demonstrations(path, demos: Sequence[Demonstration]) -> None:
    if not demos:
        raise ValidationError("no demonstrations to write")
    d_in, d_out = demos[0].d_in, demos[0].d_out
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["demo", "t"] + [f"in_{i}" for i in range(d_in)]
                   + [f"out_{i}" for i in range(d_out)])
        for demo in demos:
            if (demo.d_in, demo.d_out) != (d_in, d_out):
                raise ValidationError("demonstrations differ in dimension")
            times = demo.times if demo.times is not None else np.arange(len(demo), dtype=float)
            for t, x, y in zip(times, demo.inputs, demo.outputs):
                w.writerow([demo.demo_id, repr(float(t))] + [repr(float(v)) for v in x]
                           + [repr(float(v)) for v in y])


def model_to_dict(model: kmp.KmpModel) -> dict:
    h, ref = model.hyper, model.reference
    return {
        "version": MODEL_VERSION,
        "hyperparams": {"lambda1": h.lambda1, "lambda2": h.lambda2,
                        "lengthscale": h.lengthscale, "sigma_f2": h.sigma_f2},
        "reference": {
            "inputs": ref.inputs.tolist(),
            "means": ref.means.tolist(),
            "covariances": ref.covariances.reshape(len(ref), -1).tolist(),
        },
    }


def model_from_dict(doc: dict) -> kmp.KmpModel:
    try:
        version = doc["version"]
        hp = doc["hyperparams"]
        ref = doc["reference"]
        hyper = kmp.KmpHyperparams(float(hp["lambda1"]), float(hp["lambda2"]),
                                   float(hp["lengthscale"]), float(hp["sigma_f2"]))
        inputs = np.asarray(ref["inputs"], dtype=float)
        means = np.asarray(ref["means"], dtype=float)
        covs = np.asarray(ref["covariances"], dtype=float)
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed model document: missing or bad field {exc}") from exc
    if version != MODEL_VERSION:
        raise ValidationError(f"unsupported model version {version!r}")
    if means.ndim != 2 or covs.shape != (means.shape[0], means.shape[1] ** 2):
        raise ValidationError("model reference arrays have inconsistent shapes")
    covs = covs.reshape(means.shape[0], means.shape[1], means.shape[1])
    return kmp.train(ReferenceTrajectory(inputs, means, covs), hyper)


def save_model(path, model: kmp.KmpModel) -> None:
    # repr-exact floats keep the round trip bit-identical
    Path(path).write_text(json.dumps(model_to_dict(model)), encoding="utf-8")


def load_model(path) -> kmp.KmpModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line=exc.lineno) from exc
    return model_from_dict(doc)


def read_matrix(path) -> np.ndarray:
    """Read a numeric CSV (optional header row) as a 2-D array of queries."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            numeric = all(_is_float(c) for c in row)
            if reader.line_num == 1 and not numeric:
                continue
            if not numeric:
                raise ParseError("non-numeric cell", line=reader.line_num)
            if rows and len(row) != len(rows[0]):
                raise ParseError(f"expected {len(rows[0])} fields, found {len(row)}",
                                 line=reader.line_num)
            rows.append([float(c) for c in row])
    if not rows:
        raise ParseError("no data rows", line=1)
    return np.asarray(rows)


def trace_columns(trace: TraceRecord) -> list[str]:
    d_in = trace.input.shape[1]
    n_c = trace.fused.shape[1]
    cols = ["time"] + [f"in_{i}" for i in range(d_in)]
    for name in trace.controller_ids:
        cols += [f"{name}.mean_{i}" for i in range(n_c)]
        cols += [f"{name}.var_{i}" for i in range(n_c)]
        cols += [f"{name}.kp_{i}" for i in range(n_c)]
        cols += [f"{name}.kv_{i}" for i in range(n_c)]
        cols += [f"{name}.u_{i}" for i in range(n_c)]
        cols += [f"{name}.ratio", f"{name}.share"]
    cols += [f"u_{i}" for i in range(n_c)]
    cols += [f"x_{i}" for i in range(n_c)] + [f"v_{i}" for i in range(n_c)]
    cols += ["tracking_error", "phase"]
    return cols


def _trace_rows(trace: TraceRecord):
    for i in range(len(trace)):
        row = [trace.time[i], *trace.input[i]]
        for p in range(len(trace.controller_ids)):
            row += list(trace.mean[i, p]) + list(np.diag(trace.cov[i, p]))
            row += list(np.diag(trace.kp[i, p])) + list(np.diag(trace.kv[i, p]))
            row += list(trace.command[i, p]) + [trace.ratio[i, p], trace.share[i, p]]
        row += list(trace.fused[i]) + list(trace.position[i]) + list(trace.velocity[i])
        row += [trace.tracking_error[i]]
        yield [repr(float(v)) for v in row] + [trace.phase[i]]


def config_summary(config: ScenarioConfig) -> dict:
    return {
        "name": config.name,
        "seed": config.seed,
        "dt": config.dt,
        "duration": config.duration,
        "n_steps": config.n_steps,
        "initial_position": config.initial_state.position.tolist(),
        "initial_velocity": config.initial_state.velocity.tolist(),
        "phases": [list(p) for p in config.phases],
        "controllers": [
            {"name": c.name, "R": c.R.tolist(), "velocity_weight": c.velocity_weight,
             "model": model_to_dict(c.model)["hyperparams"] | {"n_points": c.model.n_points}}
            for c in config.controllers
        ],
    }


def write_trace(out_dir, trace: TraceRecord, config: ScenarioConfig,
                stem: str | None = None) -> tuple[Path, Path]:
    """Write ``<stem>.csv`` and the ``<stem>.json`` config sidecar; return both paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = stem or f"trace_{config.name}"
    csv_path, json_path = out / f"{stem}.csv", out / f"{stem}.json"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trace_columns(trace))
        w.writerows(_trace_rows(trace))
    sidecar = config_summary(config) | {
        "columns": trace_columns(trace),
        "events": [{"step": s, "message": m} for s, m in trace.events],
    }
    json_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True), encoding="utf-8")
    return csv_path, json_path
