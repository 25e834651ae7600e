import logging

import numpy as np
from scipy import linalg
from scipy.integrate import trapezoid

from dynorder.errors import NumericException, ValidationException

log = logging.getLogger("dynorder.foe")

DEFAULT_THRESHOLDS = (0.9975, 0.99, 0.95, 0.90)
DEFAULT_SENSITIVITY = 2.0

# Mean IDF below this means success probability above one half
RECOMMENDATION_THRESHOLD = 0.5

# Reading of the complexity formula implemented by complexity_score
COMPLEXITY_INTERPRETATION = 'A'

# Cumulative variance within this distance below a threshold counts as reaching it
CUMULATIVE_TOLERANCE = 1e-12


class DegenerateMatrixException(NumericException):
    pass


class InvalidThresholdException(ValidationException):
    pass


class InfiniteScore(object):
    """
    FOE value for datasets whose AUC * IDF is zero.
    Serializes as "undefined" and ranks below every finite score.
    """
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super(InfiniteScore, cls).__new__(cls)
        return cls._instance

    def to_json(self):
        return 'undefined'

    def __repr__(self):
        return 'INFINITE'

    def __str__(self):
        return 'undefined'


INFINITE = InfiniteScore()


class DataRegime(object):
    HDLSS = 'HDLSS'
    HDHSS = 'HDHSS'
    LDHSS = 'LDHSS'
    LDLSS = 'LDLSS'
    MIXED = 'MixedRegime'


class VarianceSpectrum(object):
    """
    Explained-variance ratios of the principal components, largest first, with their prefix sums
    """

    def __init__(self, explained):
        explained = np.asarray(explained, dtype=np.float64)
        if explained.ndim != 1 or explained.size == 0:
            raise ValidationException('A spectrum needs at least one ratio')
        if np.any(explained < 0) or np.any(np.diff(explained) > 1e-12):
            raise ValidationException('Explained variance ratios must be non-negative and non-increasing')
        if abs(explained.sum() - 1.0) > 1e-9:
            raise ValidationException('Explained variance ratios sum to {}, not 1'.format(explained.sum()))
        cumulative = np.minimum(np.cumsum(explained), 1.0)
        cumulative[-1] = 1.0
        explained.setflags(write=False)
        cumulative.setflags(write=False)
        self.explained = explained
        self.cumulative = cumulative

    @property
    def m(self):
        return self.explained.shape[0]


def _eigenvalues(centered):
    n, m = centered.shape
    if m <= n:
        scatter = centered.T @ centered
    else:
        # Same nonzero spectrum as the covariance at n x n cost
        scatter = centered @ centered.T
    values = linalg.eigvalsh(scatter / (n - 1))
    values = np.clip(values, 0.0, None)[::-1]
    if values.shape[0] < m:
        values = np.concatenate([values, np.zeros(m - values.shape[0])])
    return values[:m]


def variance_spectrum(X):
    """
    PCA spectrum of a (standardized) data matrix
    :param X: DataMatrix or 2-d array of n samples by m features
    :return: VarianceSpectrum of length m
    """
    values = np.asarray(getattr(X, 'values', X), dtype=np.float64)
    n, m = values.shape
    if n < 2:
        raise DegenerateMatrixException('PCA needs at least 2 samples, got {}'.format(n))
    centered = values - values.mean(axis=0)
    if not np.any(centered):
        raise DegenerateMatrixException('Matrix has no variance after centering')
    eigenvalues = _eigenvalues(centered)
    total = eigenvalues.sum()
    if not np.isfinite(total) or total <= 0:
        raise DegenerateMatrixException('Total variance is {}'.format(total))
    explained = eigenvalues / total
    # Round-off can leave tiny increases between equal eigenvalues
    explained = np.minimum.accumulate(explained)
    return VarianceSpectrum(explained / explained.sum())


def _check_threshold(threshold):
    if not 0.0 < threshold <= 1.0:
        raise InvalidThresholdException('Threshold must be in (0, 1], got {}'.format(threshold))


def intrinsic_dimensionality(spectrum, threshold):
    """
    Smallest number of components whose cumulative explained variance reaches threshold
    """
    _check_threshold(threshold)
    reached = np.flatnonzero(spectrum.cumulative >= threshold - CUMULATIVE_TOLERANCE)
    if reached.size == 0:
        return spectrum.m
    return int(reached[0]) + 1


def success_probability(intrinsic, total):
    if not 1 <= intrinsic <= total:
        raise ValidationException('Intrinsic dimensionality {} outside 1..{}'.format(intrinsic, total))
    return 1.0 - float(intrinsic) / total


def _curve_points(spectrum, thresholds):
    dims = [intrinsic_dimensionality(spectrum, t) for t in thresholds]
    points = sorted((float(d) / spectrum.m, float(spectrum.cumulative[d - 1])) for d in dims)
    return dims, points


def auc_idf_variance(spectrum, thresholds=DEFAULT_THRESHOLDS):
    """
    Trapezoidal area under the curve of cumulative variance against IDF, one point per threshold
    """
    if len(thresholds) < 2:
        raise InvalidThresholdException('AUC needs at least 2 thresholds, got {}'.format(len(thresholds)))
    _, points = _curve_points(spectrum, thresholds)
    x = np.array([p[0] for p in points])
    y = np.array([p[1] for p in points])
    if np.all(x == x[0]):
        return 0.0
    return float(trapezoid(y, x))


def _check_sensitivity(s):
    if not s > 0:
        raise ValidationException('Sensitivity s must be positive, got {}'.format(s))


def optimize_psi(auc, s=DEFAULT_SENSITIVITY):
    """
    Closed-form minimizer of (psi / auc**s - 1)**2; 1 when auc is zero
    """
    _check_sensitivity(s)
    if auc == 0:
        return 1.0
    return float(auc ** s)


def descend_psi(auc, s=DEFAULT_SENSITIVITY, start=1.0, tol=1e-15, max_iters=10000):
    """
    Gradient descent on the psi loss, kept as a check on optimize_psi.
    With step size a**2 / 4 (a = auc**s) every step halves the distance to the minimizer.
    """
    _check_sensitivity(s)
    if auc == 0:
        return 1.0
    target = auc ** s
    step = target ** 2 / 4.0
    psi = start
    for _ in range(max_iters):
        gradient = 2.0 * (psi / target - 1.0) / target
        updated = psi - step * gradient
        if abs(updated - psi) < tol:
            return updated
        psi = updated
    log.warning('psi descent stopped after {} iterations'.format(max_iters))
    return psi


def foe_score(psi, auc, mean_idf, s=DEFAULT_SENSITIVITY):
    """
    Feature ordering effectiveness psi / (auc * mean_idf)**s
    :return: float, or INFINITE when auc * mean_idf is zero
    """
    _check_sensitivity(s)
    if mean_idf < 0:
        raise ValidationException('Mean IDF must be non-negative, got {}'.format(mean_idf))
    base = auc * mean_idf
    if base == 0:
        return INFINITE
    return float(psi / base ** s)


def complexity_score(spectrum, mean_idf, s=DEFAULT_SENSITIVITY, thresholds=DEFAULT_THRESHOLDS):
    # Mean cumulative variance at the per-threshold dimensions over mean_idf**s
    _check_sensitivity(s)
    if not mean_idf > 0:
        raise ValidationException('Mean IDF must be positive, got {}'.format(mean_idf))
    dims = [intrinsic_dimensionality(spectrum, t) for t in thresholds]
    numerator = float(np.mean([spectrum.cumulative[d - 1] for d in dims]))
    return numerator / mean_idf ** s


def data_regime(n, m):
    """
    Dataset taxonomy by feature count m, sample count n and their ratio
    """
    rho = float(m) / n
    if m > 1000 and n < 1000 and rho > 2:
        return DataRegime.HDLSS
    if m > 1000 and n > 10000 and 0.005 < rho <= 2:
        return DataRegime.HDHSS
    if m <= 100 and n > 10000 and rho <= 0.01:
        return DataRegime.LDHSS
    if m <= 100 and n <= 1000 and rho <= 0.05:
        return DataRegime.LDLSS
    return DataRegime.MIXED


class FoeReport(object):

    def __init__(self, dataset, n, m, thresholds, intrinsic_dims, idfs, mean_idf, success_probs, auc, psi_star, s,
                 foe, complexity, regime):
        self.dataset = dataset
        self.n = n
        self.m = m
        self.thresholds = list(thresholds)
        self.intrinsic_dims = list(intrinsic_dims)
        self.idfs = list(idfs)
        self.mean_idf = mean_idf
        self.success_probs = list(success_probs)
        self.auc = auc
        self.psi_star = psi_star
        self.s = s
        self.foe = foe
        self.complexity = complexity
        self.complexity_interpretation = COMPLEXITY_INTERPRETATION
        self.regime = regime

    @property
    def foe_is_infinite(self):
        return self.foe is INFINITE

    def to_dict(self):
        return {
            'dataset': self.dataset,
            'n': self.n,
            'm': self.m,
            'regime': self.regime,
            'thresholds': self.thresholds,
            'intrinsic_dims': self.intrinsic_dims,
            'idfs': self.idfs,
            'mean_idf': self.mean_idf,
            'success_probs': self.success_probs,
            'auc': self.auc,
            'psi_star': self.psi_star,
            's': self.s,
            'foe': self.foe.to_json() if self.foe_is_infinite else self.foe,
            'complexity': self.complexity,
            'complexity_interpretation': self.complexity_interpretation,
        }


def analyze(X, thresholds=DEFAULT_THRESHOLDS, s=DEFAULT_SENSITIVITY, dataset=None):
    """
    Full intrinsic-dimensionality analysis of one dataset
    :param X: standardized DataMatrix
    :param thresholds: cumulative variance levels
    :param s: sensitivity exponent
    :param dataset: name to put on the report; defaults to the matrix source
    :return: FoeReport
    """
    for t in thresholds:
        _check_threshold(t)
    spectrum = variance_spectrum(X)
    m = spectrum.m
    dims = [intrinsic_dimensionality(spectrum, t) for t in thresholds]
    idfs = [float(d) / m for d in dims]
    mean_idf = float(np.mean(idfs))
    auc = auc_idf_variance(spectrum, thresholds)
    psi = optimize_psi(auc, s)
    foe = foe_score(psi, auc, mean_idf, s)
    complexity = complexity_score(spectrum, mean_idf, s, thresholds)
    n = X.values.shape[0]
    if dataset is None:
        dataset = X.metadata.get('source', 'dataset')
    log.info('{}: intrinsic dims {} mean IDF {:.5f} FOE {}'.format(dataset, dims, mean_idf, foe))
    return FoeReport(dataset, n, m, thresholds, dims, idfs, mean_idf,
                     [success_probability(d, m) for d in dims], auc, psi, s, foe, complexity, data_regime(n, m))


def recommends_ordering(report, threshold=RECOMMENDATION_THRESHOLD):
    return report.mean_idf < threshold


def rank_reports(reports):
    """
    Rank reports by FOE, highest first; undefined scores go last, ties by dataset name
    :return: list of (rank, report) with ranks starting at 1
    """
    def key(report):
        if report.foe_is_infinite:
            return (1, 0.0, report.dataset)
        return (0, -report.foe, report.dataset)
    return list(enumerate(sorted(reports, key=key), start=1))


RANKING_HEADER = ['rank', 'dataset', 'foe', 'complexity', 'psi_star', 'mean_idf', 'auc']


def ranking_rows(reports):
    rows = []
    for rank, report in rank_reports(reports):
        foe = report.foe.to_json() if report.foe_is_infinite else repr(report.foe)
        rows.append([rank, report.dataset, foe, repr(report.complexity), repr(report.psi_star),
                     repr(report.mean_idf), repr(report.auc)])
    return rows
