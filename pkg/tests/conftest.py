import math

import numpy as np
import pytest

from linefield.geometry import structural_distance
from linefield.synth import PRIMITIVE_KINDS, PrimitiveSpec, render_synthetic


def greedy_match_count(detected, gt, tol):
    """One-to-one greedy matching count at a structural tolerance."""
    pairs = sorted(
        (structural_distance(s, g), i, j)
        for i, s in enumerate(detected)
        for j, g in enumerate(gt)
    )
    used_d = [False] * len(detected)
    used_g = [False] * len(gt)
    got = 0
    for d, i, j in pairs:
        if d > tol:
            break
        if used_d[i] or used_g[j]:
            continue
        used_d[i] = used_g[j] = True
        got += 1
    return got


def recall_at(detected, gt, tol=5.0):
    return greedy_match_count(detected, gt, tol) / max(len(gt), 1)


@pytest.fixture(scope="session")
def small_corpus():
    """24 renders cycling all 8 primitive kinds."""
    out = []
    for seed in range(24):
        kind = PRIMITIVE_KINDS[seed % len(PRIMITIVE_KINDS)]
        out.append(render_synthetic(PrimitiveSpec(kind=kind), seed=seed))
    return out


@pytest.fixture(scope="session")
def rectifier_corpus():
    """Stroke-heavy corpus used by the pseudo-label recovery tests."""
    kinds = ("line", "polygon", "star", "grid")
    out = []
    for seed in range(12):
        kind = kinds[seed % len(kinds)]
        out.append(render_synthetic(PrimitiveSpec(kind=kind, height=160, width=160), seed=2000 + seed))
    return out


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)


def wrap_mod_pi_deg(diff):
    """Unsigned angular difference mod pi, in degrees."""
    d = np.mod(np.asarray(diff) + math.pi / 2, math.pi) - math.pi / 2
    return np.degrees(np.abs(d))
