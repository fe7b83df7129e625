"""Normality tests on whitened components: D'Agostino K2 and Jarque-Bera.

Both tests consume biased sample moments (skewness g1 = m3 / m2^1.5,
excess kurtosis g2 = m4 / m2^2 - 3).  Jarque-Bera is the classic
n/6 * (g1^2 + g2^2/4) statistic; K2 combines D'Agostino's transformed
skewness with the Anscombe-Glynn transformed kurtosis.  Both are
referred to the chi-squared(2) distribution, whose survival function
is exactly exp(-x/2).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateSampleError, ParameterError
from .pca import WhitenedCoeffs
from .tensor import Tensor

MIN_SAMPLES = 8  # smallest n for which the K2 transforms are defined


@dataclass(frozen=True)
class MomentSummary:
    """Sample size, central moments, and shape statistics of one sample."""

    n: int
    mean: float
    m2: float
    m3: float
    m4: float
    g1: float
    g2: float


def moments(sample) -> MomentSummary:
    """Central moments by direct summation in 64-bit."""
    x = np.asarray(sample, dtype=np.float64).reshape(-1)
    n = x.size
    if n < MIN_SAMPLES:
        raise ParameterError(f"need at least {MIN_SAMPLES} samples, got {n}")
    mean = x.mean()
    centered = x - mean
    m2 = np.mean(centered ** 2)
    m3 = np.mean(centered ** 3)
    m4 = np.mean(centered ** 4)
    if m2 <= 0.0:
        raise DegenerateSampleError("sample has zero variance")
    g1 = m3 / m2 ** 1.5
    g2 = m4 / (m2 * m2) - 3.0
    return MomentSummary(n=n, mean=float(mean), m2=float(m2), m3=float(m3),
                         m4=float(m4), g1=float(g1), g2=float(g2))


def _chi2_sf_2dof(stat: float) -> float:
    return float(np.exp(-stat / 2.0))


def jarque_bera(summary: MomentSummary) -> tuple[float, float]:
    """JB = n/6 * (g1^2 + g2^2/4), p from chi-squared(2)."""
    stat = summary.n / 6.0 * (summary.g1 ** 2 + summary.g2 ** 2 / 4.0)
    return float(stat), _chi2_sf_2dof(stat)


def _skewness_z(summary: MomentSummary) -> float:
    """D'Agostino's normalizing transform of sample skewness."""
    n, g1 = summary.n, summary.g1
    y = g1 * np.sqrt((n + 1.0) * (n + 3.0) / (6.0 * (n - 2.0)))
    beta2 = (3.0 * (n * n + 27.0 * n - 70.0) * (n + 1.0) * (n + 3.0)
             / ((n - 2.0) * (n + 5.0) * (n + 7.0) * (n + 9.0)))
    w2 = -1.0 + np.sqrt(2.0 * (beta2 - 1.0))
    delta = 1.0 / np.sqrt(0.5 * np.log(w2))
    alpha = np.sqrt(2.0 / (w2 - 1.0))
    y_over_alpha = y / alpha
    return float(delta * np.log(y_over_alpha + np.sqrt(y_over_alpha ** 2 + 1.0)))


def _kurtosis_z(summary: MomentSummary) -> float:
    """Anscombe-Glynn normalizing transform of sample kurtosis."""
    n = summary.n
    b2 = summary.g2 + 3.0
    mean_b2 = 3.0 * (n - 1.0) / (n + 1.0)
    var_b2 = (24.0 * n * (n - 2.0) * (n - 3.0)
              / ((n + 1.0) ** 2 * (n + 3.0) * (n + 5.0)))
    x = (b2 - mean_b2) / np.sqrt(var_b2)
    sqrt_beta1 = (6.0 * (n * n - 5.0 * n + 2.0) / ((n + 7.0) * (n + 9.0))
                  * np.sqrt(6.0 * (n + 3.0) * (n + 5.0) / (n * (n - 2.0) * (n - 3.0))))
    a = 6.0 + 8.0 / sqrt_beta1 * (2.0 / sqrt_beta1
                                  + np.sqrt(1.0 + 4.0 / sqrt_beta1 ** 2))
    denom = 1.0 + x * np.sqrt(2.0 / (a - 4.0))
    term = np.cbrt((1.0 - 2.0 / a) / denom)
    return float(((1.0 - 2.0 / (9.0 * a)) - term) / np.sqrt(2.0 / (9.0 * a)))


def dagostino_k2(summary: MomentSummary) -> tuple[float, float]:
    """K2 = Z1^2 + Z2^2 from the transformed skewness and kurtosis."""
    if summary.n < MIN_SAMPLES:
        raise ParameterError(f"K2 needs n >= {MIN_SAMPLES}, got {summary.n}")
    z1 = _skewness_z(summary)
    z2 = _kurtosis_z(summary)
    stat = z1 * z1 + z2 * z2
    return float(stat), _chi2_sf_2dof(stat)


@dataclass(frozen=True)
class ComponentResult:
    """Both test results for one whitened component."""

    component: int
    k2_stat: float
    k2_pvalue: float
    jb_stat: float
    jb_pvalue: float


@dataclass
class NormalityReport:
    """Per-component results plus rejection counts at each alpha level."""

    results: list
    alpha_levels: tuple = (0.05, 0.01)
    untestable: list = field(default_factory=list)

    @property
    def n_tested(self) -> int:
        return len(self.results)

    def rejections(self, test: str, alpha: float) -> int:
        attr = {"k2": "k2_pvalue", "jb": "jb_pvalue"}[test]
        return sum(1 for r in self.results if getattr(r, attr) < alpha)

    def to_table(self) -> str:
        """Tab-separated per-component table with a header row."""
        lines = ["component_index\tk2_stat\tk2_p\tjb_stat\tjb_p"]
        for r in self.results:
            lines.append(f"{r.component}\t{r.k2_stat:.10g}\t{r.k2_pvalue:.10g}"
                         f"\t{r.jb_stat:.10g}\t{r.jb_pvalue:.10g}")
        return "\n".join(lines) + "\n"

    def summary_block(self, dataset: str = "dataset") -> str:
        """Rejection counts per test and alpha, one row per test."""
        header = "dataset\ttest\t" + "\t".join(
            f"alpha={a:g}" for a in self.alpha_levels)
        lines = [header]
        for test, label in (("k2", "K2"), ("jb", "J-B")):
            counts = "\t".join(str(self.rejections(test, a)) for a in self.alpha_levels)
            lines.append(f"{dataset}\t{label}\t{counts}")
        if self.untestable:
            lines.append(f"# untestable components (zero variance): "
                         f"{', '.join(map(str, self.untestable))}")
        lines.append(f"# components tested: {self.n_tested}")
        return "\n".join(lines) + "\n"


def test_all_components(w, alpha_levels=(0.05, 0.01)) -> NormalityReport:
    """Run both tests on every component column of a whitened matrix.

    Zero-variance columns are recorded as untestable and excluded from
    the counts rather than counted as rejections.
    """
    if isinstance(w, WhitenedCoeffs):
        values = w.values.data
    elif isinstance(w, Tensor):
        values = w.data
    else:
        values = np.asarray(w, dtype=np.float64)
    if values.ndim != 2:
        raise ParameterError(f"expected a (samples, components) matrix, got {values.shape}")
    alphas = tuple(float(a) for a in alpha_levels)
    if not alphas:
        raise ParameterError("alpha_levels must be nonempty")
    for a in alphas:
        if not 0.0 < a < 1.0:
            raise ParameterError(f"alpha levels must lie in (0, 1), got {a}")
    results = []
    untestable = []
    for idx in range(values.shape[1]):
        try:
            summary = moments(values[:, idx])
        except DegenerateSampleError:
            untestable.append(idx)
            continue
        k2_stat, k2_p = dagostino_k2(summary)
        jb_stat, jb_p = jarque_bera(summary)
        results.append(ComponentResult(component=idx, k2_stat=k2_stat, k2_pvalue=k2_p,
                                       jb_stat=jb_stat, jb_pvalue=jb_p))
    return NormalityReport(results=results, alpha_levels=alphas, untestable=untestable)
