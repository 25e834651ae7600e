import itertools
import json
import logging
import os

import numpy as np
from scipy.spatial.distance import pdist

from dynorder.errors import DataIOException, ValidationException
from dynorder.permutation import check_permutation, positions
from dynorder.report import to_json_text, write_csv_atomic, write_text_atomic
from dynorder.rewiring import Direction, dispersion

log = logging.getLogger("dynorder.global_order")

DEFAULT_COHERENCE_EPS = 1e-6

# Adjacent swaps must lower the objective by more than this
SWAP_TOLERANCE = 1e-12

# Borda keys are compared after rounding to this many decimals
KEY_DECIMALS = 12

BRUTE_FORCE_MAX_FEATURES = 9


class InconsistentFeatureSetsException(ValidationException):
    pass


class PermutationFileException(DataIOException):
    pass


class GlobalOrdering(object):
    """
    One column order for the whole dataset, with the cluster weights and local orders it was built from.
    score is the weighted dispersion of order over the clusters' rewired graphs, None when no graphs were given.
    """

    def __init__(self, order, alphas, local=None, score=None, coherence=None, importance=None, column_names=None):
        self.order = np.asarray(order, dtype=np.int64)
        self.alphas = np.asarray(getattr(alphas, 'alphas', alphas), dtype=np.float64)
        self.local = list(local or [])
        self.score = score
        self.coherence = coherence
        self.importance = None if importance is None else np.asarray(importance, dtype=np.float64)
        self.column_names = column_names

    @property
    def m(self):
        return self.order.shape[0]

    def to_dict(self):
        result = {
            'order': self.order.tolist(),
            'column_names': self.column_names,
            'score': self.score,
            'alphas': self.alphas.tolist(),
            'coherence': self.coherence,
        }
        if self.importance is not None:
            result['importance'] = self.importance.tolist()
        return result


def _check_locals(locals_, alphas):
    if not locals_:
        raise InconsistentFeatureSetsException('No local orderings to aggregate')
    m = locals_[0].order.shape[0]
    for local in locals_:
        if local.order.shape[0] != m:
            raise InconsistentFeatureSetsException('Local orderings cover {} and {} features'.format(
                m, local.order.shape[0]))
        try:
            check_permutation(local.order, m)
        except ValidationException as ex:
            raise InconsistentFeatureSetsException(str(ex)) from ex
    if alphas.shape[0] != len(locals_):
        raise InconsistentFeatureSetsException('{} cluster weights for {} local orderings'.format(
            alphas.shape[0], len(locals_)))
    return m


def combined_weights(graphs, alphas):
    alphas = np.asarray(getattr(alphas, 'alphas', alphas), dtype=np.float64)
    return sum(alpha * graph.adjacency() for alpha, graph in zip(alphas, graphs))


def adjacent_swap_descent(order, weights):
    """
    Swap neighbours while that lowers the arrangement cost of weights; repeats full passes until none helps.
    Swapping a and b at positions i and i+1 changes the cost by
    sum over the left of (w[a] - w[b]) minus sum over the right of (w[a] - w[b]).
    """
    order = np.array(order, dtype=np.int64)
    m = order.shape[0]
    swaps = 0
    improved = True
    while improved:
        improved = False
        for i in range(m - 1):
            a, b = order[i], order[i + 1]
            difference = weights[a] - weights[b]
            delta = difference[order[:i]].sum() - difference[order[i + 2:]].sum()
            if delta < -SWAP_TOLERANCE:
                order[i], order[i + 1] = b, a
                swaps += 1
                improved = True
    log.debug('Adjacent swap descent made {} swaps'.format(swaps))
    return order


def aggregate(locals_, alphas, direction=Direction.ASCENDING, graphs=None):
    """
    Merge local orders into one global order.
    Each feature's key is the alpha-weighted mean of its local positions; features are sorted by key, ties by
    index. With graphs, adjacent swaps then lower the weighted dispersion over those graphs.
    :param locals_: list of LocalOrdering, one per cluster
    :param alphas: ClusterWeights or sequence of weights aligned with locals_
    :param direction: Direction.DESCENDING sorts keys from largest to smallest
    :param graphs: optional rewired FeatureGraphs aligned with locals_
    :return: GlobalOrdering
    """
    weights = np.asarray(getattr(alphas, 'alphas', alphas), dtype=np.float64)
    m = _check_locals(locals_, weights)
    if direction not in Direction.ALL:
        raise ValidationException('Unknown direction {}'.format(direction))
    local_positions = np.vstack([positions(local.order) for local in locals_])
    keys = np.round(weights @ local_positions, KEY_DECIMALS)
    if direction == Direction.DESCENDING:
        keys = -keys
    order = np.lexsort((np.arange(m), keys))
    score = None
    if graphs is not None:
        if len(graphs) != len(locals_):
            raise InconsistentFeatureSetsException('{} graphs for {} local orderings'.format(
                len(graphs), len(locals_)))
        before = global_dispersion(graphs, weights, order)
        order = adjacent_swap_descent(order, combined_weights(graphs, weights))
        score = global_dispersion(graphs, weights, order)
        log.info('Global dispersion {:.6g} after rank aggregation, {:.6g} after swaps'.format(before, score))
    return GlobalOrdering(order, weights, locals_, score)


def global_dispersion(graphs, alphas, order):
    alphas = np.asarray(getattr(alphas, 'alphas', alphas), dtype=np.float64)
    return float(sum(alpha * dispersion(graph, order) for alpha, graph in zip(alphas, graphs)))


def coherence_penalty(order, feature_vectors, eps=DEFAULT_COHERENCE_EPS):
    """
    Mean over feature pairs of their position distance divided by the distance between their representation
    vectors (plus eps); features that look alike and sit far apart cost the most.
    :param order: permutation
    :param feature_vectors: m x k matrix, row u describes feature u (its value at each cluster centroid)
    :param eps: positive offset
    """
    if not eps > 0:
        raise ValidationException('eps must be positive, got {}'.format(eps))
    feature_vectors = np.asarray(feature_vectors, dtype=np.float64)
    if feature_vectors.ndim == 1:
        feature_vectors = feature_vectors[:, None]
    m = feature_vectors.shape[0]
    pos = positions(check_permutation(order, m)).astype(np.float64)
    if m < 2:
        return 0.0
    position_distance = pdist(pos[:, None], 'cityblock')
    feature_distance = pdist(feature_vectors, 'euclidean')
    return float(np.mean(position_distance / (feature_distance + eps)))


def apply_permutation(X, order):
    """
    Reorder the columns of a DataMatrix; column i of the result is column order[i] of X
    """
    order = check_permutation(order, X.m)
    metadata = {'order': order.tolist()}
    if 'blocks' in X.metadata:
        metadata['blocks'] = [X.metadata['blocks'][f] for f in order]
    return X.replace(values=X.values[:, order], column_names=[X.column_names[f] for f in order], metadata=metadata)


def brute_force_order(weights):
    """
    Exhaustive minimum linear arrangement for small graphs
    :param weights: symmetric m x m weight matrix, m <= 9
    :return: (order, cost) of the first optimal permutation in lexicographic order
    """
    weights = np.asarray(getattr(weights, 'weights', weights), dtype=np.float64)
    m = weights.shape[0]
    if m > BRUTE_FORCE_MAX_FEATURES:
        raise ValidationException('Exhaustive search is limited to {} features, got {}'.format(
            BRUTE_FORCE_MAX_FEATURES, m))
    orders = np.array(list(itertools.permutations(range(m))), dtype=np.int64)
    pos = np.argsort(orders, axis=1)
    us, vs = np.triu_indices(m, 1)
    costs = np.abs(pos[:, us] - pos[:, vs]) @ weights[us, vs]
    best = int(np.argmin(costs))
    return orders[best], float(costs[best])


def write_permutation(path, ordering, fmt='json'):
    if fmt == 'json':
        write_text_atomic(path, to_json_text(ordering.to_dict()))
    elif fmt == 'csv':
        write_csv_atomic(path, ['order'], [[int(f)] for f in ordering.order])
    else:
        raise ValidationException('Unknown permutation format {}'.format(fmt))


def read_permutation(path):
    """
    Read a permutation written by write_permutation; CSV files carry the order only
    :return: GlobalOrdering
    """
    if not os.path.isfile(path):
        raise PermutationFileException('Permutation file not found: {}'.format(path))
    with open(path, encoding='utf-8') as f:
        text = f.read()
    if path.endswith('.csv'):
        lines = [line.strip() for line in text.splitlines()[1:] if line.strip()]
        try:
            order = [int(line) for line in lines]
        except ValueError as ex:
            raise ValidationException('Bad permutation file {}: {}'.format(path, ex)) from ex
        check_permutation(order, len(order))
        return GlobalOrdering(order, [1.0])
    try:
        data = json.loads(text)
    except ValueError as ex:
        raise ValidationException('Bad permutation file {}: {}'.format(path, ex)) from ex
    if 'order' not in data:
        raise ValidationException('Permutation file {} has no order'.format(path))
    order = check_permutation(data['order'], len(data['order']))
    return GlobalOrdering(order, data.get('alphas', [1.0]), score=data.get('score'), coherence=data.get('coherence'),
                          importance=data.get('importance'), column_names=data.get('column_names'))
