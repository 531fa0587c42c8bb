"""Paired-classifier significance testing via five repetitions of two-fold
cross-validation, with the F-statistic referred to an F(10, 5) tail.

For metric differences p_ij (iteration i, fold j):

    mean_i = (p_i1 + p_i2) / 2
    s2_i   = (p_i1 - mean_i)^2 + (p_i2 - mean_i)^2
    f      = sum_ij p_ij^2 / (2 * sum_i s2_i)

The p-value is the upper tail of F(10, 5), evaluated through the
regularized incomplete beta function (continued fractions, 1e-10
convergence) so no external distribution library is needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, DEFAULT_SCHEMA, LabelSchema, split
from .metrics import evaluate_predictions, metric_value


class StatsError(ValueError):
    """Invalid input to a statistical routine."""


class DegenerateVarianceError(StatsError):
    """All within-iteration variances are zero but differences are not."""


# ---------------------------------------------------------------------------
# regularized incomplete beta and the F upper tail
# ---------------------------------------------------------------------------

_CF_EPS = 1e-10
_CF_TINY = 1e-300
_CF_MAX_ITER = 500


def _beta_continued_fraction(a: float, b: float, x: float) -> float:
    """Continued-fraction core of the incomplete beta (modified Lentz)."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_TINY:
        d = _CF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise StatsError(f"incomplete beta failed to converge for a={a}, b={b}, x={x}")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if a <= 0 or b <= 0:
        raise StatsError(f"beta parameters must be positive, got a={a}, b={b}")
    if not 0.0 <= x <= 1.0:
        raise StatsError(f"x must lie in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    front = math.exp(
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_continued_fraction(a, b, x) / a
    return 1.0 - front * _beta_continued_fraction(b, a, 1.0 - x) / b


def f_upper_tail(f: float, d1: int = 10, d2: int = 5) -> float:
    """P(F(d1, d2) > f)."""
    if not math.isfinite(f):
        raise StatsError(f"f statistic must be finite, got {f!r}")
    if f < 0:
        raise StatsError(f"f statistic must be non-negative, got {f}")
    if d1 <= 0 or d2 <= 0:
        raise StatsError("degrees of freedom must be positive")
    x = d2 / (d2 + d1 * f)
    return regularized_incomplete_beta(d2 / 2.0, d1 / 2.0, x)


# ---------------------------------------------------------------------------
# the 5x2cv F-test
# ---------------------------------------------------------------------------


@dataclass
class FiveByTwoResult:
    differences: np.ndarray  # (5, 2) metric differences, A minus B
    iteration_means: np.ndarray  # (5,)
    iteration_variances: np.ndarray  # (5,)
    f_statistic: float
    p_value: float
    alpha: float
    reject: bool
    no_difference: bool = False

    def to_dict(self) -> dict:
        return {
            "differences": self.differences.tolist(),
            "iteration_means": self.iteration_means.tolist(),
            "iteration_variances": self.iteration_variances.tolist(),
            "f_statistic": self.f_statistic,
            "p_value": self.p_value,
            "alpha": self.alpha,
            "reject": self.reject,
            "no_difference": self.no_difference,
        }


def f_test_from_differences(differences, alpha: float = 0.05) -> FiveByTwoResult:
    """Build the F-test result from a (5, 2) array of metric differences."""
    diffs = np.asarray(differences, dtype=np.float64)
    if diffs.shape != (5, 2):
        raise StatsError(f"expected a (5, 2) difference array, got {diffs.shape}")
    means = diffs.mean(axis=1)
    variances = ((diffs[:, 0] - means) ** 2) + ((diffs[:, 1] - means) ** 2)
    denom = 2.0 * float(variances.sum())
    sum_sq = float((diffs**2).sum())
    if denom == 0.0:
        if sum_sq == 0.0:
            return FiveByTwoResult(
                differences=diffs,
                iteration_means=means,
                iteration_variances=variances,
                f_statistic=0.0,
                p_value=1.0,
                alpha=alpha,
                reject=False,
                no_difference=True,
            )
        raise DegenerateVarianceError(
            "all within-iteration variances are zero while differences are not; "
            "the F statistic is undefined"
        )
    f = sum_sq / denom
    p = f_upper_tail(f, 10, 5)
    return FiveByTwoResult(
        differences=diffs,
        iteration_means=means,
        iteration_variances=variances,
        f_statistic=f,
        p_value=p,
        alpha=alpha,
        reject=p < alpha,
    )


def five_by_two_fold_metrics(
    factories: dict,
    corpus: Corpus,
    task: str,
    metric: str,
    seed: int,
    schema: LabelSchema = DEFAULT_SCHEMA,
) -> dict[str, np.ndarray]:
    """Per-fold metric for each named model factory over the 5x2 folds.

    Every factory sees identical folds and identical training seeds, so the
    per-fold values of any two factories are directly comparable.  A factory
    is ``factory(train_corpus, task, seed) -> predictor`` where the
    predictor maps a document list to predicted labels.
    """
    classes = schema.classes_for(task)
    out = {name: np.zeros((5, 2)) for name in factories}
    for i in range(5):
        half_a, _, half_b = split(
            corpus,
            {"train": 0.5, "val": 0.0, "test": 0.5},
            seed=(seed * 1000003 + i),
            task=task,
            schema=schema,
        )
        for j, (train_part, test_part) in enumerate(((half_a, half_b), (half_b, half_a))):
            truth = [doc.label(task) for doc in test_part]
            train_seed = seed * 1000003 + i * 17 + j
            for name, factory in factories.items():
                predictor = factory(train_part, task, train_seed)
                predictions = predictor.predict(test_part.documents)
                report = evaluate_predictions(truth, predictions, classes)
                out[name][i, j] = metric_value(report, metric)
    return out


def five_by_two_cv_f_test(
    factory_a,
    factory_b,
    corpus: Corpus,
    task: str,
    metric: str = "accuracy",
    seed: int = 0,
    alpha: float = 0.05,
    schema: LabelSchema = DEFAULT_SCHEMA,
) -> FiveByTwoResult:
    """Compare two classifiers with five seeded repetitions of stratified
    2-fold cross-validation; returns the F-test over metric differences."""
    metrics = five_by_two_fold_metrics(
        {"a": factory_a, "b": factory_b}, corpus, task, metric, seed, schema
    )
    return f_test_from_differences(metrics["a"] - metrics["b"], alpha=alpha)
