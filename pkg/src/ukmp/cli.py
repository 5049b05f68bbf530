"""Command-line interface.

Exit codes: 0 success, 1 invalid input or usage, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io, kmp, lqr
from .errors import NumericalError, UkmpError, ValidationError
from .pipeline import learn_kmp
from .scenarios import SCENARIOS, make_scenario
from .simulator import ControllerSpec, PointMassState, ScenarioConfig, run_scenario, run_time_driven

log = logging.getLogger("ukmp")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _positive(kind):
    def convert(text):
        try:
            value = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid {kind.__name__} value: {text!r}") from None
        if not value > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return value
    return convert


def _non_negative(text):
    value = float(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {text}")
    return value


def _hyper_args(p, lambda1=0.1, lambda2=1.0, lengthscale=0.1, sigma_f2=1.0):
    p.add_argument("--lambda1", type=_positive(float), default=lambda1)
    p.add_argument("--lambda2", type=_positive(float), default=lambda2)
    p.add_argument("--lengthscale", type=_positive(float), default=lengthscale)
    p.add_argument("--sigma-f2", type=_positive(float), default=sigma_f2)


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("UKMP_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise ValidationError(f"UKMP_SEED must be an integer, got {env!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ukmp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="fit a GMM, build the reference and train a KMP")
    p.add_argument("--demos", required=True, help="demonstration CSV")
    p.add_argument("--out", required=True, help="model JSON to write")
    p.add_argument("--components", type=_positive(int), default=3)
    p.add_argument("--n-ref", type=_positive(int), default=500, help="reference points N")
    _hyper_args(p)
    p.add_argument("--seed", type=int)

    for name, helptext in (("predict", "mean, covariance and uncertainty ratio per query"),
                           ("gains", "LQR stiffness and damping per query")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--model", required=True)
        p.add_argument("--queries", required=True, help="CSV with one query per row")
        p.add_argument("--out", help="write CSV here instead of stdout")
        if name == "gains":
            p.add_argument("--r", type=_positive(float), default=1e-2, help="control weight R = r*I")
            p.add_argument("--velocity-weight", type=_non_negative, default=0.0)

    p = sub.add_parser("simulate", help="run a closed-loop scenario and write the trace")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario", choices=SCENARIOS)
    src.add_argument("--config", help="JSON run configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--dt", type=_positive(float))
    p.add_argument("--duration", type=_positive(float))
    p.add_argument("--time-driven", action="store_true",
                   help="finite-horizon tracking of a precomputed reference (one controller)")

    p = sub.add_parser("scenario", help="write a scenario's synthetic demonstrations as CSV")
    p.add_argument("--name", required=True, choices=SCENARIOS)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", default=".")

    p = sub.add_parser("limit", help="print the far-field covariance sigma_f2 * N / lambda2 * I")
    p.add_argument("--sigma-f2", type=_positive(float), required=True)
    p.add_argument("--n", type=_positive(int), required=True)
    p.add_argument("--lambda2", type=_positive(float), required=True)
    p.add_argument("--dim", type=_positive(int), default=1)
    return parser


def _emit(lines, out):
    text = "\n".join(lines) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _fmt(values):
    return [repr(float(v)) for v in values]


def _queries(model, path):
    q = io.read_matrix(path)
    if q.shape[1] != model.d_in:
        raise ValidationError(f"queries have {q.shape[1]} columns; model expects {model.d_in}")
    return q


def cmd_train(args):
    demos = io.parse_demonstrations(args.demos)
    hyper = kmp.KmpHyperparams(args.lambda1, args.lambda2, args.lengthscale, args.sigma_f2)
    learned = learn_kmp(demos, hyper, args.components, args.n_ref, seed=_seed(args))
    io.save_model(args.out, learned.model)
    log.info("trained %r on %d demonstrations", learned.model, len(demos))


def cmd_predict(args):
    model = io.load_model(args.model)
    q = _queries(model, args.queries)
    means, covs = kmp.predict_batch(model, q)
    d_in, d = model.d_in, model.d_out
    header = ([f"in_{i}" for i in range(d_in)] + [f"mean_{i}" for i in range(d)]
              + [f"cov_{i}{j}" for i in range(d) for j in range(d)] + ["ratio"])
    lines = [",".join(header)]
    for x, m, c in zip(q, means, covs):
        lines.append(",".join(_fmt([*x, *m, *c.reshape(-1), kmp.is_uncertain(model, c)])))
    _emit(lines, args.out)


def cmd_gains(args):
    model = io.load_model(args.model)
    q = _queries(model, args.queries)
    d_in, d = model.d_in, model.d_out
    system = lqr.double_integrator(d)
    R = args.r * np.eye(d)
    header = ([f"in_{i}" for i in range(d_in)] + [f"kp_{i}{j}" for i in range(d) for j in range(d)]
              + [f"kv_{i}{j}" for i in range(d) for j in range(d)])
    lines = [",".join(header)]
    for x, c in zip(q, kmp.predict_cov_batch(model, q)):
        g = lqr.infinite_horizon_gains(system, lqr.weight_from_cov(c, args.velocity_weight), R)
        lines.append(",".join(_fmt([*x, *g.Kp.reshape(-1), *g.Kv.reshape(-1)])))
    _emit(lines, args.out)


def _config_from_file(path, seed):
    """Build a ScenarioConfig from JSON.

    Either ``{"scenario": name, ...}`` or a custom run with keys ``controllers``
    (``name``, ``model`` path, ``r``, optional ``velocity_weight``), ``input``
    (``times``, ``values``), ``dt``, ``duration`` and ``initial_position``.
    """
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON: {exc.msg} (line {exc.lineno})") from exc
    seed = int(doc.get("seed", seed))
    if "scenario" in doc:
        _, config = make_scenario(doc["scenario"], seed)
        return config, doc
    try:
        base = Path(path).parent
        ctrls = tuple(
            ControllerSpec(c["name"], io.load_model(base / c["model"]), R=float(c["r"]),
                           velocity_weight=float(c.get("velocity_weight", 0.0)))
            for c in doc["controllers"])
        n_c = ctrls[0].model.d_out
        pos = np.asarray(doc["initial_position"], dtype=float)
        vel = np.asarray(doc.get("initial_velocity", np.zeros(n_c)), dtype=float)
        config = ScenarioConfig(
            controllers=ctrls, input_times=doc["input"]["times"],
            input_values=doc["input"]["values"], dt=float(doc["dt"]),
            duration=float(doc["duration"]), initial_state=PointMassState(pos, vel),
            seed=seed, name=str(doc.get("name", Path(path).stem)),
            phases=tuple(doc.get("phases", ())))
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"{path}: missing or malformed field {exc}") from exc
    return config, doc


def cmd_simulate(args):
    seed = _seed(args)
    if args.scenario:
        _, config = make_scenario(args.scenario, seed)
    else:
        config, _ = _config_from_file(args.config, seed)
    changes = {k: getattr(args, k) for k in ("dt", "duration") if getattr(args, k) is not None}
    if changes:
        config = dataclasses.replace(config, **changes)
    runner = run_time_driven if args.time_driven else run_scenario
    trace = runner(config)
    csv_path, json_path = io.write_trace(args.out_dir, trace, config)
    for step, msg in trace.events:
        log.warning("step %d: %s", step, msg)
    print(csv_path)
    print(json_path)


def cmd_scenario(args):
    data, _ = make_scenario(args.name, _seed(args))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for key, demos in data.items():
        path = out / f"{args.name}_{key}.csv"
        io.write_demonstrations(path, demos)
        print(path)


def cmd_limit(args):
    hyper = kmp.KmpHyperparams(1.0, args.lambda2, 1.0, args.sigma_f2)
    lim = kmp.uncertainty_limit(hyper, args.n, args.dim)
    for row in lim:
        print(" ".join(repr(float(v)) for v in row))


COMMANDS = {"train": cmd_train, "predict": cmd_predict, "gains": cmd_gains,
            "simulate": cmd_simulate, "scenario": cmd_scenario, "limit": cmd_limit}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except NumericalError as exc:
        print(f"ukmp: numerical failure: {exc}", file=sys.stderr)
        return 2
    except (UkmpError, OSError) as exc:
        print(f"ukmp: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
