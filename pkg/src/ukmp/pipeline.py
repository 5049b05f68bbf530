"""Initialization phase: demonstrations -> GMM -> GMR reference -> trained KMP."""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import gmm, kmp


def sub_seed(seed: int, tag: str) -> int:
    """Deterministic child seed for the stochastic component named ``tag``."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(tag.encode())])
    return int(ss.generate_state(1)[0])


@dataclass(frozen=True)
class LearnedModel:
    mixture: gmm.GmmModel
    reference: gmm.ReferenceTrajectory
    model: kmp.KmpModel


def learn_kmp(demos: Sequence[gmm.Demonstration], hyper: kmp.KmpHyperparams,
              n_components: int, n_reference: int, seed: int = 0,
              max_iter: int = 200, tol: float = 1e-8) -> LearnedModel:
    mixture = gmm.fit_gmm(demos, n_components, seed=sub_seed(seed, "gmm"),
                          max_iter=max_iter, tol=tol)
    inputs = gmm.sample_inputs(mixture, n_reference, seed=sub_seed(seed, "reference"))
    reference = gmm.build_reference(mixture, inputs)
    return LearnedModel(mixture, reference, kmp.train(reference, hyper))
