"""Synthetic demonstration data and ready-to-run scenario configurations.

Four scenarios are packaged:

``toy1d``
    Scalar input/output regression with variability rising across the
    training range, queried inside and then far outside it.
``handover``
    Seven 3-D demonstrations mapping the human hand position to the robot
    end-effector. Robot starts vary widely; all demonstrations end within a
    2 cm ball at the handover location.
``painting``
    Five painting-stroke demonstrations in a separate part of the workspace.
``painting_full``
    Both sub-task models, driven by a hand path that performs the handover,
    walks through the empty region between the sub-tasks and then paints.

Trajectories are minimum-jerk segments between waypoints plus seeded noise.
"""

from __future__ import annotations

import numpy as np

from . import kmp
from .errors import ValidationError
from .gmm import Demonstration
from .pipeline import learn_kmp, sub_seed
from .simulator import ControllerSpec, PointMassState, ScenarioConfig

SCENARIOS = ("toy1d", "handover", "painting", "painting_full")
DT = 0.01

TOY_HYPER = kmp.KmpHyperparams(lambda1=5.0, lambda2=750.0, lengthscale=1e-2, sigma_f2=1.0)
TOY_COMPONENTS = 4
TOY_N = 750
TOY_WIDTH = 0.15

TASK_HYPER = kmp.KmpHyperparams(lambda1=0.1, lambda2=1.0, lengthscale=0.1, sigma_f2=1.0)
TASK_COMPONENTS = 3
TASK_N = 500
TASK_R = 1e-2 * np.eye(3)

HAND_HANDOVER = np.array([0.60, -0.90, 0.35])
HAND_APPROACH = np.array([-0.45, 0.0, 0.0])
ROBOT_HANDOVER = np.array([0.45, -0.35, 0.45])
ROBOT_START = np.array([0.30, -0.05, 0.65])

HAND_PAINT = np.array([0.60, 0.90, 0.35])
ROBOT_PAINT = np.array([0.65, 0.30, 0.35])
PAINT_COUPLING = np.diag([0.3, 0.5, 1.0])
STROKE = 0.15


def min_jerk(s):
    s = np.clip(s, 0.0, 1.0)
    return s ** 3 * (10.0 - 15.0 * s + 6.0 * s * s)


def _segment(start, end, n):
    phase = min_jerk(np.linspace(0.0, 1.0, n))[:, None]
    return start + (end - start) * phase


def toy1d_demos(seed: int, n_demos: int = 20, n_samples: int = 60) -> list[Demonstration]:
    rng = np.random.default_rng(sub_seed(seed, "toy1d-data"))
    demos = []
    for h in range(n_demos):
        x = np.sort(rng.uniform(0.0, TOY_WIDTH, n_samples))
        sd = 0.6 + 0.3 * x / TOY_WIDTH
        y = 0.5 * np.sin(np.pi * x / TOY_WIDTH) + sd * rng.standard_normal(n_samples)
        demos.append(Demonstration(x[:, None], y[:, None], times=np.linspace(0, 1, n_samples),
                                   demo_id=h))
    return demos


def handover_demos(seed: int, n_demos: int = 7) -> list[Demonstration]:
    rng = np.random.default_rng(sub_seed(seed, "handover-data"))
    n_move, n_dwell, duration = 160, 40, 4.0
    demos = []
    for h in range(n_demos):
        hand_end = HAND_HANDOVER + rng.normal(0.0, 0.005, 3)
        hand_start = (HAND_HANDOVER + HAND_APPROACH
                      + np.array([0.0, rng.uniform(-0.15, 0.15), rng.uniform(-0.10, 0.10)]))
        # The robot meets the hand, so its endpoint follows the hand's.
        offset = 0.5 * (hand_end - HAND_HANDOVER) + rng.normal(0.0, 0.003, 3)
        offset *= min(1.0, 0.015 / np.linalg.norm(offset))
        robot_end = ROBOT_HANDOVER + offset
        robot_start = ROBOT_START + rng.uniform(-0.12, 0.12, 3)
        hand = np.vstack([_segment(hand_start, hand_end, n_move), np.tile(hand_end, (n_dwell, 1))])
        robot = np.vstack([_segment(robot_start, robot_end, n_move),
                           np.tile(robot_end, (n_dwell, 1))])
        hand = hand + rng.normal(0.0, 0.002, hand.shape)
        robot = robot + rng.normal(0.0, 0.002, robot.shape)
        times = np.arange(n_move + n_dwell) * duration / (n_move - 1)
        demos.append(Demonstration(hand, robot, times=times, demo_id=h))
    return demos


def _stroke_path(center, amplitude, n):
    """Hand path for one up-and-down board stroke centred on ``center``."""
    low = center - np.array([0.0, 0.0, amplitude])
    high = center + np.array([0.0, 0.0, amplitude])
    return np.vstack([_segment(low, high, n // 2), _segment(high, low, n - n // 2)])


def paint_robot(hand):
    return ROBOT_PAINT + (np.atleast_2d(hand) - HAND_PAINT) @ PAINT_COUPLING.T


def painting_demos(seed: int, n_demos: int = 5) -> list[Demonstration]:
    rng = np.random.default_rng(sub_seed(seed, "painting-data"))
    n, duration = 200, 4.0
    demos = []
    for h in range(n_demos):
        center = HAND_PAINT + rng.uniform(-0.03, 0.03, 3)
        hand = _stroke_path(center, STROKE + rng.uniform(-0.02, 0.02), n)
        robot = paint_robot(hand) + rng.normal(0.0, 0.003, 3)
        hand = hand + rng.normal(0.0, 0.002, hand.shape)
        robot = robot + rng.normal(0.0, 0.001, robot.shape)
        demos.append(Demonstration(hand, robot, times=np.linspace(0.0, duration, n), demo_id=h))
    return demos


def _handover_signal(dt):
    """Test hand path: approach the handover point over 4 s, then hold for 2 s."""
    start = HAND_HANDOVER + HAND_APPROACH + np.array([0.0, 0.05, -0.03])
    t_move = np.arange(0.0, 4.0 + dt / 2, dt)
    path = _segment(start, HAND_HANDOVER, t_move.size)
    return t_move, path


def _concat_signal(pieces):
    times, values = [], []
    offset = 0.0
    for t, v in pieces:
        t = t + offset
        if times:
            t, v = t[1:], v[1:]
        times.append(t)
        values.append(v)
        offset = t[-1]
    return np.concatenate(times), np.vstack(values)


def _hold(point, duration, dt):
    t = np.arange(0.0, duration + dt / 2, dt)
    return t, np.tile(point, (t.size, 1))


def _stroke_signal(cycles, dt):
    period = 4.0
    n = int(round(period / dt)) + 1
    pieces = [(np.linspace(0.0, period, n), _stroke_path(HAND_PAINT, STROKE, n))
              for _ in range(cycles)]
    return _concat_signal(pieces)


def _toy_config(model, seed):
    t_in = np.linspace(0.0, 3.0, 301)
    x_in = t_in / 3.0 * TOY_WIDTH
    t_out = np.linspace(0.0, 2.0, 201)
    x_out = TOY_WIDTH + t_out / 2.0 * 1.35
    times, values = _concat_signal([(t_in, x_in[:, None]), (t_out, x_out[:, None])])
    start = kmp.predict_mean(model, [0.0])
    ctrl = ControllerSpec("toy", model, R=1e-2 * np.eye(1))
    return ScenarioConfig(
        controllers=(ctrl,), input_times=times, input_values=values, dt=DT, duration=5.0,
        initial_state=PointMassState(start, np.zeros(1)), seed=seed, name="toy1d",
        phases=((0.0, 3.0, "in-data"), (3.0, 5.0 + DT, "out-of-data")))


def scenario_models(name: str, seed: int = 0):
    """Demonstrations and learned models (GMM, reference, KMP) for a scenario.

    Returns two dicts keyed by controller name: demonstrations and
    :class:`~ukmp.pipeline.LearnedModel`.
    """
    if name not in SCENARIOS:
        raise ValidationError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    if name == "toy1d":
        data = {"toy": toy1d_demos(seed)}
        hyper, n_comp, n_ref = TOY_HYPER, TOY_COMPONENTS, TOY_N
    else:
        data = {}
        if name in ("handover", "painting_full"):
            data["handover"] = handover_demos(seed)
        if name in ("painting", "painting_full"):
            data["painting"] = painting_demos(seed)
        hyper, n_comp, n_ref = TASK_HYPER, TASK_COMPONENTS, TASK_N
    learned = {key: learn_kmp(demos, hyper, n_comp, n_ref, seed=sub_seed(seed, key))
               for key, demos in data.items()}
    return data, learned


def make_scenario(name: str, seed: int = 0):
    """Synthesize demonstrations, train the scenario's KMPs and build its config.

    Returns ``(demonstrations, config)`` where ``demonstrations`` maps each
    controller name to its list of :class:`~ukmp.gmm.Demonstration`.
    """
    data, learned = scenario_models(name, seed)
    if name == "toy1d":
        return data, _toy_config(learned["toy"].model, seed)
    ctrls = tuple(ControllerSpec(key, lm.model, R=TASK_R) for key, lm in learned.items())

    if name == "handover":
        times, values = _concat_signal([_handover_signal(DT), _hold(HAND_HANDOVER, 2.0, DT)])
        phases = ((0.0, 6.0 + DT, "handover"),)
        start = ROBOT_START
    elif name == "painting":
        times, values = _stroke_signal(1, DT)
        phases = ((0.0, 4.0 + DT, "painting"),)
        start = paint_robot(values[0])[0]
    else:
        stroke_t, stroke_v = _stroke_signal(2, DT)
        walk_t = np.arange(0.0, 6.0 + DT / 2, DT)
        walk = _segment(HAND_HANDOVER, stroke_v[0], walk_t.size)
        times, values = _concat_signal([_handover_signal(DT), _hold(HAND_HANDOVER, 2.0, DT),
                                        (walk_t, walk), (stroke_t, stroke_v)])
        phases = ((0.0, 6.0, "handover"), (6.0, 12.0, "transit"), (12.0, 20.0 + DT, "painting"))
        start = ROBOT_START
    config = ScenarioConfig(
        controllers=ctrls, input_times=times, input_values=values, dt=DT,
        duration=float(round(times[-1], 6)), initial_state=PointMassState(start, np.zeros(3)),
        seed=seed, name=name, phases=phases)
    return data, config
