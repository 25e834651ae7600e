import logging
import math

import numpy as np
from scipy.spatial.distance import cdist, pdist, squareform
from scipy.special import rel_entr

from dynorder.errors import ValidationException
from dynorder.report import write_csv_atomic

log = logging.getLogger("dynorder.graph")

DEFAULT_KL_BINS = 32
KL_PSEUDO_COUNT = 1e-6
DEFAULT_ALPHA_EPS = 1e-6
DEFAULT_MAX_ITERS = 300

# Column standard deviations at or below this are treated as constant
CONSTANT_TOLERANCE = 1e-12


class TooManyClustersException(ValidationException):
    pass


class LengthMismatchException(ValidationException):
    pass


class EmptyClusterException(ValidationException):
    pass


class UnknownMetricException(ValidationException):
    pass


class Metric(object):
    KL = 'kl'
    EUCLIDEAN = 'euclidean'
    MANHATTAN = 'manhattan'
    VARIANCE = 'variance'
    CORRELATION = 'correlation'

    ALL = (KL, EUCLIDEAN, MANHATTAN, VARIANCE, CORRELATION)


class ClusterAssignment(object):
    """
    Result of clustering the samples: assignment[i] is the cluster of sample i
    """

    def __init__(self, k, assignment, centroids, objective_history=None, converged=True):
        self.k = k
        self.assignment = np.asarray(assignment, dtype=np.int64)
        self.centroids = np.asarray(centroids, dtype=np.float64)
        self.sizes = np.bincount(self.assignment, minlength=k)
        self.objective_history = list(objective_history or [])
        self.converged = converged

    @property
    def objective(self):
        return self.objective_history[-1] if self.objective_history else None

    def rows(self, cluster_id):
        return np.flatnonzero(self.assignment == cluster_id)


class ClusterWeights(object):
    """
    Importance weight of each cluster; positive and summing to one
    """

    def __init__(self, alphas):
        alphas = np.array(alphas, dtype=np.float64)
        if alphas.ndim != 1 or alphas.size == 0:
            raise ValidationException('Cluster weights need at least one value')
        if np.any(alphas <= 0) or abs(alphas.sum() - 1.0) > 1e-9:
            raise ValidationException('Cluster weights must be positive and sum to 1, got {}'.format(alphas.tolist()))
        alphas.setflags(write=False)
        self.alphas = alphas

    def __len__(self):
        return self.alphas.shape[0]

    def __getitem__(self, item):
        return self.alphas[item]

    def to_json(self):
        return self.alphas.tolist()


class FeatureGraph(object):
    """
    Weighted graph over all m features of one cluster.

    dissimilarity holds the measured edge metric between every pair of features. weights holds the affinities that
    the arrangement works with (similar features get heavy edges), and edges marks which pairs are connected.
    Both matrices are symmetric with an empty diagonal, and weights are zero wherever there is no edge.
    """

    def __init__(self, cluster_id, dissimilarity, weights, edges=None, metric=None, fallback=False):
        dissimilarity = np.array(dissimilarity, dtype=np.float64)
        weights = np.array(weights, dtype=np.float64)
        m = weights.shape[0]
        if weights.shape != (m, m) or dissimilarity.shape != (m, m):
            raise ValidationException('Graph matrices must be square and of equal size')
        if edges is None:
            edges = ~np.eye(m, dtype=bool)
        edges = np.array(edges, dtype=bool)
        np.fill_diagonal(edges, False)
        if not (np.array_equal(edges, edges.T) and np.allclose(weights, weights.T)):
            raise ValidationException('Graph must be symmetric')
        weights = np.where(edges, weights, 0.0)
        if not np.all(np.isfinite(weights)) or np.any(weights < 0):
            raise ValidationException('Edge weights must be finite and non-negative')
        for array in (dissimilarity, weights, edges):
            array.setflags(write=False)
        self.cluster_id = cluster_id
        self.dissimilarity = dissimilarity
        self.weights = weights
        self.edges = edges
        self.metric = metric
        self.fallback = fallback

    @property
    def m(self):
        return self.weights.shape[0]

    @property
    def edge_count(self):
        return int(np.count_nonzero(np.triu(self.edges, 1)))

    def adjacency(self):
        return self.weights

    def incident_weight(self):
        return self.weights.sum(axis=1)

    def edge_list(self):
        us, vs = np.nonzero(np.triu(self.edges, 1))
        return [(int(u), int(v), float(self.weights[u, v])) for u, v in zip(us, vs)]

    def with_weights(self, weights, edges=None):
        return FeatureGraph(self.cluster_id, self.dissimilarity, weights,
                            self.edges if edges is None else edges, self.metric, self.fallback)

    @classmethod
    def from_weights(cls, weights, cluster_id=0, edges=None):
        """
        Graph whose weights are given directly; dissimilarity mirrors them
        """
        weights = np.asarray(weights, dtype=np.float64)
        if edges is None:
            edges = weights > 0
        return cls(cluster_id, weights, weights, edges)


def _select_values(X):
    return np.asarray(getattr(X, 'values', X), dtype=np.float64)


def _seed_centers(values, k, rng):
    """
    k-means++ seeding: later centers are drawn with probability proportional to the squared distance
    to the nearest chosen center
    """
    n = values.shape[0]
    chosen = [int(rng.integers(n))]
    nearest = cdist(values, values[chosen], 'sqeuclidean').ravel()
    while len(chosen) < k:
        total = nearest.sum()
        if total > 0:
            candidate = int(rng.choice(n, p=nearest / total))
        else:
            candidate = min(set(range(n)) - set(chosen))
        chosen.append(candidate)
        nearest = np.minimum(nearest, cdist(values, values[[candidate]], 'sqeuclidean').ravel())
    return values[chosen].copy()


def _repair_empty(values, assignment, centroids, k):
    counts = np.bincount(assignment, minlength=k)
    for empty in np.flatnonzero(counts == 0):
        spread = ((values - centroids[assignment]) ** 2).sum(axis=1)
        spread[counts[assignment] <= 1] = -np.inf
        donor = int(np.argmax(spread))
        log.debug('Cluster {} empty, moving sample {} from cluster {}'.format(empty, donor, assignment[donor]))
        counts[assignment[donor]] -= 1
        assignment[donor] = empty
        counts[empty] = 1
    return assignment


def kmeans(X, k, seed, max_iters=DEFAULT_MAX_ITERS):
    """
    Lloyd's algorithm from seeded k-means++ centers.
    Ties between equally near centroids go to the lowest cluster id; empty clusters take the sample farthest
    from its centroid among clusters that can spare one.
    :param X: DataMatrix or array of n samples
    :param k: number of clusters, 1 <= k <= n
    :param seed: integer seed
    :param max_iters: iteration cap
    :return: ClusterAssignment
    """
    values = _select_values(X)
    n = values.shape[0]
    if not 1 <= k <= n:
        raise TooManyClustersException('Cannot make {} clusters from {} samples'.format(k, n))
    if max_iters < 1:
        raise ValidationException('max_iters must be at least 1, got {}'.format(max_iters))
    rng = np.random.default_rng(seed)
    centroids = _seed_centers(values, k, rng)
    assignment = None
    history = []
    converged = False
    for _ in range(max_iters):
        updated = cdist(values, centroids, 'sqeuclidean').argmin(axis=1)
        updated = _repair_empty(values, updated, centroids, k)
        centroids = np.vstack([values[updated == j].mean(axis=0) for j in range(k)])
        history.append(float(((values - centroids[updated]) ** 2).sum()))
        if assignment is not None and np.array_equal(updated, assignment):
            converged = True
            break
        assignment = updated
    else:
        log.warning('k-means stopped after {} iterations without converging'.format(max_iters))
    log.info('k-means with k={} finished after {} iterations, objective {:.6g}'.format(k, len(history), history[-1]))
    return ClusterAssignment(k, updated, centroids, history, converged)


def _kl_matrix(columns, bins):
    m = columns.shape[1]
    result = np.zeros((m, m))
    for u in range(m):
        for v in range(u + 1, m):
            lo = min(columns[:, u].min(), columns[:, v].min())
            hi = max(columns[:, u].max(), columns[:, v].max())
            if hi <= lo:
                continue
            edges = np.linspace(lo, hi, bins + 1)
            p = np.histogram(columns[:, u], edges)[0] + KL_PSEUDO_COUNT
            q = np.histogram(columns[:, v], edges)[0] + KL_PSEUDO_COUNT
            p = p / p.sum()
            q = q / q.sum()
            result[u, v] = result[v, u] = rel_entr(p, q).sum() + rel_entr(q, p).sum()
    return result


def _correlation_matrix(columns):
    n, m = columns.shape
    std = columns.std(axis=0)
    constant = std <= CONSTANT_TOLERANCE
    if np.any(constant):
        log.debug('Correlation undefined for constant columns {}; their edges get 0'.format(
            np.flatnonzero(constant).tolist()))
    scaled = (columns - columns.mean(axis=0)) / np.where(constant, 1.0, std * math.sqrt(n))
    scaled[:, constant] = 0.0
    correlation = np.clip(scaled.T @ scaled, -1.0, 1.0)
    result = 1.0 - np.abs(correlation)
    result[constant, :] = 0.0
    result[:, constant] = 0.0
    return result


def pairwise_dissimilarity(columns, metric, bins=DEFAULT_KL_BINS):
    """
    Dense matrix of the edge metric between every pair of columns
    :param columns: array of samples by features
    :param metric: one of Metric.ALL
    :param bins: histogram bins for the KL metric
    :return: symmetric m x m matrix with zero diagonal
    """
    columns = np.asarray(columns, dtype=np.float64)
    if metric == Metric.EUCLIDEAN:
        result = squareform(pdist(columns.T, 'euclidean'))
    elif metric == Metric.MANHATTAN:
        result = squareform(pdist(columns.T, 'cityblock'))
    elif metric == Metric.VARIANCE:
        variances = columns.var(axis=0, ddof=1)
        result = np.abs(variances[:, None] - variances[None, :])
    elif metric == Metric.CORRELATION:
        result = _correlation_matrix(columns)
    elif metric == Metric.KL:
        result = _kl_matrix(columns, bins)
    else:
        raise UnknownMetricException('Unknown edge metric {}, expected one of {}'.format(metric, Metric.ALL))
    result = np.maximum((result + result.T) / 2.0, 0.0)
    np.fill_diagonal(result, 0.0)
    return result


def edge_weight(col_u, col_v, metric, bins=DEFAULT_KL_BINS):
    col_u = np.asarray(col_u, dtype=np.float64)
    col_v = np.asarray(col_v, dtype=np.float64)
    if col_u.shape != col_v.shape or col_u.ndim != 1:
        raise LengthMismatchException('Columns have shapes {} and {}'.format(col_u.shape, col_v.shape))
    if col_u.shape[0] < 2:
        raise LengthMismatchException('Columns need at least 2 values')
    if not (np.all(np.isfinite(col_u)) and np.all(np.isfinite(col_v))):
        raise ValidationException('Columns must be finite')
    return float(pairwise_dissimilarity(np.column_stack([col_u, col_v]), metric, bins)[0, 1])


def affinity(dissimilarity):
    """
    Turn dissimilarities into edge weights exp(-z / sigma), sigma being the median off-diagonal dissimilarity
    """
    dissimilarity = np.asarray(dissimilarity, dtype=np.float64)
    m = dissimilarity.shape[0]
    off_diagonal = dissimilarity[np.triu_indices(m, 1)]
    scale = float(np.median(off_diagonal)) if off_diagonal.size else 0.0
    if scale <= 0:
        positive = off_diagonal[off_diagonal > 0]
        scale = float(positive.mean()) if positive.size else 1.0
    weights = np.exp(-dissimilarity / scale)
    np.fill_diagonal(weights, 0.0)
    return weights


def build_graph(X, assign, cluster_id, metric, bins=DEFAULT_KL_BINS):
    """
    Complete feature graph of one cluster, measured on that cluster's samples.
    Clusters with a single sample fall back to all samples and are flagged.
    """
    values = _select_values(X)
    rows = assign.rows(cluster_id)
    if rows.shape[0] == 0:
        raise EmptyClusterException('Cluster {} has no samples'.format(cluster_id))
    fallback = rows.shape[0] < 2
    if fallback:
        log.warning('Cluster {} has {} sample, measuring its graph on all data'.format(cluster_id, rows.shape[0]))
        sample = values
    else:
        sample = values[rows]
    dissimilarity = pairwise_dissimilarity(sample, metric, bins)
    return FeatureGraph(cluster_id, dissimilarity, affinity(dissimilarity), metric=metric, fallback=fallback)


def build_graphs(X, assign, metric, bins=DEFAULT_KL_BINS):
    return [build_graph(X, assign, j, metric, bins) for j in range(assign.k)]


def cluster_alphas(centroids, eps=DEFAULT_ALPHA_EPS):
    """
    Cluster weights from inter-centroid distances: clusters close to the others weigh more
    :param centroids: k x m matrix
    :param eps: positive offset keeping the inverse distances finite
    :return: ClusterWeights
    """
    if not eps > 0:
        raise ValidationException('eps must be positive, got {}'.format(eps))
    centroids = np.atleast_2d(np.asarray(centroids, dtype=np.float64))
    k = centroids.shape[0]
    if k == 1:
        return ClusterWeights([1.0])
    inverse = 1.0 / (squareform(pdist(centroids)) + eps)
    np.fill_diagonal(inverse, 0.0)
    raw = inverse.sum(axis=1)
    return ClusterWeights(raw / raw.sum())


EDGE_LIST_HEADER = ['cluster_id', 'u', 'v', 'weight', 'dissimilarity']


def write_edge_list(path, graphs):
    rows = []
    for graph in graphs:
        for u, v, weight in graph.edge_list():
            rows.append([graph.cluster_id, u, v, repr(weight), repr(float(graph.dissimilarity[u, v]))])
    write_csv_atomic(path, EDGE_LIST_HEADER, rows)
