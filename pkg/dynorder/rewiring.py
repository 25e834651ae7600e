import logging
import math
import warnings
from itertools import combinations

import networkx as nx
import numpy as np
from scipy import linalg
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from dynorder.errors import NumericException, ValidationException
from dynorder.permutation import check_permutation, positions

log = logging.getLogger("dynorder.rewiring")

EIGENVECTOR_TOLERANCE = 1e-9
EIGENVECTOR_MAX_ITERS = 1000

# Fiedler vector entries are compared after rounding to this many decimals
FIEDLER_DECIMALS = 12


class DisconnectedGraphWarning(UserWarning):
    pass


class InvalidRewiringConfigException(ValidationException):
    pass


class EigenvectorConvergenceException(NumericException):
    pass


class Centrality(object):
    DEGREE = 'degree'
    BETWEENNESS = 'betweenness'
    EIGENVECTOR = 'eigenvector'

    ALL = (DEGREE, BETWEENNESS, EIGENVECTOR)


class Direction(object):
    ASCENDING = 'ascending'
    DESCENDING = 'descending'

    ALL = (ASCENDING, DESCENDING)


class RewiringConfig(object):
    """
    Settings of the rewiring loop for one cluster.
    tolerance stops the loop, decay_epsilon is the weight decay of the Hebbian update.
    """

    def __init__(self, centrality=Centrality.DEGREE, learning_rate_lambda=0.05, decay_epsilon=0.01, prune_theta=0.1,
                 tolerance=0.021, mutation_prob=0.2, max_rounds=50, seed=0, direction=Direction.DESCENDING,
                 rewire_fraction=0.25):
        self.centrality = centrality
        self.learning_rate_lambda = learning_rate_lambda
        self.decay_epsilon = decay_epsilon
        self.prune_theta = prune_theta
        self.tolerance = tolerance
        self.mutation_prob = mutation_prob
        self.max_rounds = max_rounds
        self.seed = seed
        self.direction = direction
        self.rewire_fraction = rewire_fraction

    def validate(self):
        if self.centrality not in Centrality.ALL:
            raise InvalidRewiringConfigException('Unknown centrality {}'.format(self.centrality))
        if self.direction not in Direction.ALL:
            raise InvalidRewiringConfigException('Unknown direction {}'.format(self.direction))
        if not self.learning_rate_lambda > 0:
            raise InvalidRewiringConfigException('lambda must be positive, got {}'.format(self.learning_rate_lambda))
        if self.decay_epsilon < 0 or self.prune_theta < 0:
            raise InvalidRewiringConfigException('decay and theta must be non-negative')
        if not self.tolerance > 0:
            raise InvalidRewiringConfigException('tolerance must be positive, got {}'.format(self.tolerance))
        if not 0.0 <= self.mutation_prob <= 1.0:
            raise InvalidRewiringConfigException('mutation_prob must be in [0, 1], got {}'.format(self.mutation_prob))
        if self.max_rounds < 1:
            raise InvalidRewiringConfigException('max_rounds must be at least 1, got {}'.format(self.max_rounds))
        if not 0.0 < self.rewire_fraction <= 1.0:
            raise InvalidRewiringConfigException('rewire_fraction must be in (0, 1], got {}'.format(
                self.rewire_fraction))

    def for_cluster(self, cluster_id):
        """
        Copy of this config with a seed derived from the base seed and the cluster id
        """
        settings = dict(vars(self))
        settings['seed'] = int(np.random.SeedSequence([self.seed, cluster_id]).generate_state(1)[0])
        return RewiringConfig(**settings)


class LocalOrdering(object):
    """
    Feature order found for one cluster. quality_history starts with the initial order's quality and holds the
    quality kept after every round.
    """

    def __init__(self, cluster_id, order, quality_history, rounds_used, converged, trace=None):
        self.cluster_id = cluster_id
        self.order = np.asarray(order, dtype=np.int64)
        self.quality_history = list(quality_history)
        self.rounds_used = rounds_used
        self.converged = converged
        self.trace = list(trace or [])

    @property
    def quality(self):
        return self.quality_history[-1]

    def to_dict(self):
        return {
            'cluster_id': self.cluster_id,
            'order': self.order.tolist(),
            'quality_history': self.quality_history,
            'rounds_used': self.rounds_used,
            'converged': self.converged,
        }


def _to_networkx(G):
    graph = nx.Graph()
    graph.add_nodes_from(range(G.m))
    graph.add_weighted_edges_from(G.edge_list())
    return graph


def _degree(G):
    degree = G.incident_weight()
    top = degree.max()
    if top <= 0:
        return np.zeros(G.m)
    return degree / top


def _betweenness(G):
    graph = _to_networkx(G)
    if G.m > 1 and not nx.is_connected(graph):
        warnings.warn('Graph of cluster {} is disconnected; betweenness is computed per component'.format(
            G.cluster_id), DisconnectedGraphWarning)
    scores = nx.betweenness_centrality(graph, weight='weight', normalized=True)
    return np.array([scores[v] for v in range(G.m)])


def _eigenvector(G):
    if G.edge_count == 0:
        return np.ones(G.m)
    try:
        scores = nx.eigenvector_centrality(_to_networkx(G), max_iter=EIGENVECTOR_MAX_ITERS, tol=EIGENVECTOR_TOLERANCE,
                                           weight='weight')
    except nx.PowerIterationFailedConvergence as ex:
        raise EigenvectorConvergenceException('Eigenvector centrality of cluster {} did not converge in {} '
                                              'iterations'.format(G.cluster_id, EIGENVECTOR_MAX_ITERS)) from ex
    vector = np.array([scores[v] for v in range(G.m)])
    return vector / vector.max()


def centrality(G, kind):
    """
    Per-vertex centrality, non-negative with maximum 1 (all zeros for an edgeless graph under degree or betweenness)
    :param G: FeatureGraph
    :param kind: one of Centrality.ALL
    :return: numpy vector of length m
    """
    if kind == Centrality.DEGREE:
        return _degree(G)
    if kind == Centrality.BETWEENNESS:
        return _betweenness(G)
    if kind == Centrality.EIGENVECTOR:
        return _eigenvector(G)
    raise InvalidRewiringConfigException('Unknown centrality {}'.format(kind))


def dispersion(G, order):
    """
    Weighted linear arrangement cost: sum over edges of weight times the distance between the endpoints' positions
    """
    pos = positions(check_permutation(order, G.m))
    distance = np.abs(pos[:, None] - pos[None, :])
    upper = np.triu_indices(G.m, 1)
    return float((G.adjacency()[upper] * distance[upper]).sum())


def quality(G, order):
    # Minimized; the same functional as dispersion
    return dispersion(G, order)


def _fiedler_sequence(weights):
    laplacian = np.diag(weights.sum(axis=1)) - weights
    _, vectors = linalg.eigh(laplacian)
    fiedler = vectors[:, 1]
    for value in fiedler:
        if abs(value) > 10 ** -FIEDLER_DECIMALS:
            if value > 0:
                fiedler = -fiedler
            break
    rounded = np.round(fiedler, FIEDLER_DECIMALS)
    return np.lexsort((np.arange(weights.shape[0]), rounded))


def initial_order(G, direction=Direction.ASCENDING):
    """
    Spectral sequencing: vertices sorted by the Fiedler vector of the graph Laplacian, ties by index.
    Disconnected graphs are sequenced per component, heaviest component first; isolated vertices come last.
    The sign of each Fiedler vector is fixed so the component's lowest-index vertex leans to the front.
    :param G: FeatureGraph
    :param direction: Direction.DESCENDING reverses the whole sequence
    :return: permutation as numpy array, order[i] is the feature at position i
    """
    weights = G.adjacency()
    count, labels = connected_components(csr_matrix(weights > 0), directed=False)
    components = []
    for label in range(count):
        members = np.flatnonzero(labels == label)
        total = float(weights[np.ix_(members, members)].sum()) / 2.0
        components.append((-total, int(members[0]), members))
    sequence = []
    for _, _, members in sorted(components, key=lambda c: (c[0], c[1])):
        if members.shape[0] <= 2:
            sequence.extend(members.tolist())
        else:
            local = _fiedler_sequence(weights[np.ix_(members, members)])
            sequence.extend(members[local].tolist())
    order = np.array(sequence, dtype=np.int64)
    if direction == Direction.DESCENDING:
        order = order[::-1].copy()
    return check_permutation(order, G.m)


def hebbian_update(G, C, lam, eps):
    """
    Centrality-driven update of every existing edge: w + lam * C(u) * C(v) - eps * w, clamped at 0
    """
    C = np.asarray(C, dtype=np.float64)
    weights = G.adjacency()
    updated = weights + lam * np.outer(C, C) - eps * weights
    clamped = G.edges & (updated < 0)
    if clamped.any():
        log.debug('Clamped {} negative edge weights to 0 in cluster {}'.format(
            int(np.count_nonzero(np.triu(clamped, 1))), G.cluster_id))
    return G.with_weights(np.where(G.edges, np.maximum(updated, 0.0), 0.0))


def _hubs(C, fraction):
    m = C.shape[0]
    count = min(m, int(math.ceil(m * fraction)))
    return np.sort(np.lexsort((np.arange(m), -C))[:count])


def _prune_and_rewire(G, C, theta, lam, eps, fraction=0.25):
    C = np.asarray(C, dtype=np.float64)
    edges = G.edges & (G.adjacency() >= theta)
    pruned = int(np.count_nonzero(np.triu(G.edges & ~edges, 1)))
    weights = np.where(edges, G.adjacency(), 0.0)
    edges = edges.copy()
    added = 0
    for u, v in combinations(_hubs(C, fraction).tolist(), 2):
        if edges[u, v]:
            continue
        # A missing edge has prior weight 0
        weights[u, v] = weights[v, u] = max(0.0, lam * C[u] * C[v] - eps * weights[u, v])
        edges[u, v] = edges[v, u] = True
        added += 1
    return G.with_weights(weights, edges), pruned, added


def prune_and_rewire(G, C, theta, lam, eps, fraction=0.25):
    """
    Remove edges lighter than theta, then connect every missing pair among the top ceil(m * fraction)
    vertices by centrality with weight max(0, lam * C(u) * C(v))
    """
    rewired, _, _ = _prune_and_rewire(G, C, theta, lam, eps, fraction)
    return rewired


def _transpose(order, rng):
    i, j = rng.choice(order.shape[0], size=2, replace=False)
    trial = order.copy()
    trial[i], trial[j] = trial[j], trial[i]
    return trial


def rewire_local(G, cfg):
    """
    Rewiring loop for one cluster.

    Each round computes centrality on the current rewired graph, prunes and rewires it, applies the Hebbian update
    and sequences the result. The candidate order replaces the current one only if its quality on G, the measured
    graph, is not worse. Once a round improves quality by less than the tolerance, a random transposition may be
    tried with probability mutation_prob (kept only on strict improvement) and the loop stops.

    Quality is always scored on G, never on the rewired graph. So with mutation_prob 0 and max_rounds 1 the
    result is initial_order(rewired) only when that order scores no worse on G than initial_order(G); otherwise
    the starting order is kept.
    :param G: FeatureGraph as measured
    :param cfg: RewiringConfig
    :return: (rewired FeatureGraph, LocalOrdering)
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    current = initial_order(G, cfg.direction)
    current_quality = quality(G, current)
    history = [current_quality]
    trace = []
    rewired = G
    converged = False
    rounds = 0
    for rounds in range(1, cfg.max_rounds + 1):
        C = centrality(rewired, cfg.centrality)
        rewired, pruned, added = _prune_and_rewire(rewired, C, cfg.prune_theta, cfg.learning_rate_lambda,
                                                   cfg.decay_epsilon, cfg.rewire_fraction)
        rewired = hebbian_update(rewired, C, cfg.learning_rate_lambda, cfg.decay_epsilon)
        candidate = initial_order(rewired, cfg.direction)
        candidate_quality = quality(G, candidate)
        improvement = 0.0
        if candidate_quality <= current_quality:
            improvement = current_quality - candidate_quality
            current, current_quality = candidate, candidate_quality
        mutated = False
        if improvement < cfg.tolerance:
            if G.m > 1 and rng.random() < cfg.mutation_prob:
                trial = _transpose(current, rng)
                trial_quality = quality(G, trial)
                if trial_quality < current_quality:
                    current, current_quality = trial, trial_quality
                    mutated = True
            converged = True
        check_permutation(current, G.m)
        history.append(current_quality)
        trace.append({'cluster_id': G.cluster_id, 'round': rounds, 'quality': current_quality,
                      'edges_pruned': pruned, 'edges_added': added, 'mutated': mutated})
        log.debug('Cluster {} round {}: Q={:.6g} pruned={} added={} mutated={}'.format(
            G.cluster_id, rounds, current_quality, pruned, added, mutated))
        if converged:
            break
    log.info('Cluster {} rewiring finished after {} rounds (converged={}), Q {:.6g} -> {:.6g}'.format(
        G.cluster_id, rounds, converged, history[0], history[-1]))
    return rewired, LocalOrdering(G.cluster_id, current, history, rounds, converged, trace)
