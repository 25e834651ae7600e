import numpy as np

from dynorder.errors import ValidationException


class NotAPermutationException(ValidationException):
    pass


def check_permutation(order, size):
    """
    Validate that order is a bijection on [0, size)
    :param order: sequence of feature indices, order[i] is the feature placed at position i
    :param size: number of features
    :return: order as an integer numpy array
    """
    try:
        arr = np.asarray(order, dtype=np.int64)
    except (TypeError, ValueError):
        raise NotAPermutationException('Order {} is not a sequence of integers'.format(order))
    if arr.ndim != 1 or arr.shape[0] != size:
        raise NotAPermutationException('Order has length {}, expected {}'.format(arr.size, size))
    if size and (arr.min() < 0 or arr.max() >= size or np.unique(arr).shape[0] != size):
        raise NotAPermutationException('Order {} is not a permutation of 0..{}'.format(arr.tolist(), size - 1))
    return arr


def positions(order):
    """
    Position map of an order: positions(order)[f] is the position of feature f
    """
    order = np.asarray(order, dtype=np.int64)
    pos = np.empty_like(order)
    pos[order] = np.arange(order.shape[0])
    return pos


def inverse_permutation(order):
    # Applying order then its inverse restores the original column layout
    return positions(order)
