"""
Data valuation: the dSID distance between CPDAGs, the KL refinement over
correctly identified pairs, and their sum ``v``.

``v(e, b)`` is 0 when ``e`` matches the benchmark ``b`` and negative
otherwise; ``v_dsid`` lies in [-1, 0].
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy.special import logsumexp
from scipy.stats import norm

from .effects import Estimator, id_graphs
from .errors import VariableMismatchError
from .graph import Pdag, count_extensions, identifies_effect
from .models import EffectDistribution, GaussianComponent, ValuationReport

logger = logging.getLogger(__name__)

DEFAULT_MC_SAMPLES = 20000

# Monte-Carlo KL estimates below -NEGATIVE_KL_TOLERANCE are reported
NEGATIVE_KL_TOLERANCE = 1e-2

Pair = tuple[int, int]


def _check_same_variables(a: Pdag, b: Pdag) -> None:
    if a.p != b.p:
        raise VariableMismatchError(a.p, b.p)


def pair_falsely_identified(c1: Pdag, c2: Pdag, i: int, j: int) -> bool:
    """
    Whether the effect mixture of (i, j) in ``c1`` differs from that in ``c2``.

    Each adjustment class of ``c1`` needs a class of ``c2`` in which its
    representative's parent set identifies the effect and whose share of
    extensions is exactly equal.
    """
    _check_same_variables(c1, c2)
    total1 = count_extensions(c1)
    total2 = count_extensions(c2)
    targets = [
        (cls.representative, Fraction(cls.extension_count, total2))
        for cls in id_graphs(c2, i, j)
    ]
    for cls in id_graphs(c1, i, j):
        share = Fraction(cls.extension_count, total1)
        if not any(
            share == other_share and identifies_effect(cls.representative, other, i, j)
            for other, other_share in targets
        ):
            return True
    return False


@lru_cache(maxsize=4096)
def falsely_identified_pairs(c1: Pdag, c2: Pdag) -> frozenset[Pair]:
    """All ordered pairs whose effect mixtures are falsely identified."""
    _check_same_variables(c1, c2)
    if c1 == c2:
        return frozenset()
    return frozenset(
        (i, j)
        for i in range(c1.p)
        for j in range(c1.p)
        if i != j and pair_falsely_identified(c1, c2, i, j)
    )


def dsid(c1: Pdag, c2: Pdag) -> int:
    """Number of ordered pairs falsely identified in ``c1`` with respect to ``c2``."""
    return len(falsely_identified_pairs(c1, c2))


def v_dsid(e: Estimator, b: Estimator) -> float:
    """``-dsid / (p (p - 1))``."""
    _check_same_variables(e.graph, b.graph)
    pairs = e.p * (e.p - 1)
    if pairs == 0:
        return 0.0
    return -dsid(e.graph, b.graph) / pairs


def kl_gaussian(p: GaussianComponent, q: GaussianComponent) -> float:
    """KL(p || q) of two univariate normals."""
    return (
        math.log(q.std / p.std)
        + (p.std**2 + (p.mean - q.mean) ** 2) / (2.0 * q.std**2)
        - 0.5
    )


def _log_density(x: np.ndarray, mixture: EffectDistribution) -> np.ndarray:
    means, stds, weights = mixture.arrays()
    return logsumexp(norm.logpdf(x[:, None], means, stds) + np.log(weights), axis=1)


def kl_mixture(
    p: EffectDistribution,
    q: EffectDistribution,
    mc_samples: int = DEFAULT_MC_SAMPLES,
    seed: int | Sequence[int] = 0,
) -> float:
    """
    KL(p || q) of two Gaussian mixtures.

    Exact for single components; otherwise a stratified Monte-Carlo estimate
    of ``E_p[log p - log q]`` with ``round(w_k * mc_samples)`` draws from
    each component ``k`` of ``p``, floored at 0.
    """
    if len(p.components) == 1 and len(q.components) == 1:
        return kl_gaussian(p.components[0], q.components[0])

    rng = np.random.default_rng(seed)
    estimate = 0.0
    for component in p.components:
        m = max(1, round(component.weight * mc_samples))
        u = (np.arange(m) + rng.uniform(size=m)) / m
        x = component.mean + component.std * norm.ppf(u)
        gap = _log_density(x, p) - _log_density(x, q)
        estimate += component.weight * float(np.mean(gap))

    if estimate < -NEGATIVE_KL_TOLERANCE:
        logger.warning(f"Monte-Carlo KL estimate {estimate:.4g} below tolerance; flooring at 0")
    return max(estimate, 0.0)


def v_kl(
    e: Estimator,
    b: Estimator,
    pairs: frozenset[Pair] | set[Pair],
    mc_samples: int = DEFAULT_MC_SAMPLES,
    seed: int = 0,
) -> float:
    """Mean negative mixture KL over ``pairs``; 0 when ``pairs`` is empty."""
    if not pairs:
        return 0.0
    total = math.fsum(
        -kl_mixture(e.effect(i, j), b.effect(i, j), mc_samples, (seed, i, j))
        for i, j in sorted(pairs)
    )
    return total / len(pairs)


def valuation(
    e: Estimator, b: Estimator, mc_samples: int = DEFAULT_MC_SAMPLES, seed: int = 0
) -> ValuationReport:
    """Quality ``v = v_dsid + v_kl`` of ``e`` with respect to benchmark ``b``."""
    _check_same_variables(e.graph, b.graph)
    wrong = falsely_identified_pairs(e.graph, b.graph)
    right = {(i, j) for i in range(e.p) for j in range(e.p) if i != j} - wrong
    structural = v_dsid(e, b)
    refinement = v_kl(e, b, right, mc_samples, seed)
    return ValuationReport(
        dsid=len(wrong),
        v_dsid=structural,
        v_kl=refinement,
        v=structural + refinement,
        correctly_identified_pairs=sorted(right),
        falsely_identified_pairs=sorted(wrong),
    )
