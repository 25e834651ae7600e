import csv
import io
import logging
import math
import os

import numpy as np

from dynorder.errors import DataIOException, ValidationException
from dynorder.permutation import check_permutation
from dynorder.report import write_csv_atomic
from dynorder.retry import retry_exponential_if_exception_type, TRANSIENT_IO_ERRORS

log = logging.getLogger("dynorder.dataset")

# Cells treated as missing values (compared lower-cased)
MISSING_TOKENS = ('', 'na', 'n/a', 'nan', 'null', 'none', '?')

# Integer-valued labels with at most this many distinct values are read as classes
CLASSIFICATION_MAX_DISTINCT = 20

# Columns whose sample std falls below this (relative to their magnitude) are constant
ZERO_VARIANCE_TOLERANCE = 1e-12


class DataFileNotFoundException(DataIOException):
    pass


class DataFileReadException(DataIOException):
    pass


class EmptyDatasetException(ValidationException):
    pass


class UnknownLabelColumnException(ValidationException):
    pass


class InvalidCorrelationException(ValidationException):
    pass


class DataMatrixException(ValidationException):
    pass


class ParseException(ValidationException):
    """
    Raised when a file cell or line cannot be read.
    row is the 1-based line number in the file (the header is line 1), column is the header name,
    None when the whole line is at fault.
    """

    def __init__(self, row, column, reason='not a number'):
        self.row = row
        self.column = column
        self.reason = reason
        super(ParseException, self).__init__('Row {}, column {}: {}'.format(row, column, reason))


class Task(object):
    BINARY = 'binary'
    MULTICLASS = 'multiclass'
    REGRESSION = 'regression'
    NONE = 'none'

    ALL = (BINARY, MULTICLASS, REGRESSION, NONE)
    CLASSIFICATION = (BINARY, MULTICLASS)


class DataMatrix(object):
    """
    A numeric table of n samples by m features with column names and optional labels.
    Values are copied on construction and frozen, so instances can be shared freely.
    """

    def __init__(self, values, column_names, labels=None, task=Task.NONE, metadata=None):
        values = np.array(values, dtype=np.float64)
        if values.ndim != 2:
            raise DataMatrixException('Values must be a 2-d matrix, got {} dimensions'.format(values.ndim))
        n, m = values.shape
        if n < 2 or m < 2:
            raise DataMatrixException('A data matrix needs at least 2 samples and 2 features, got {}x{}'.format(n, m))
        if not np.all(np.isfinite(values)):
            raise DataMatrixException('Values contain non-finite entries')
        column_names = [str(name) for name in column_names]
        if len(column_names) != m:
            raise DataMatrixException('Got {} column names for {} columns'.format(len(column_names), m))
        if task not in Task.ALL:
            raise DataMatrixException('Unknown task {}'.format(task))
        if labels is not None:
            labels = self._check_labels(labels, n, task)
            labels.setflags(write=False)
        elif task != Task.NONE:
            raise DataMatrixException('Task {} requires labels'.format(task))
        values.setflags(write=False)
        self.values = values
        self.column_names = column_names
        self.labels = labels
        self.task = task
        self.metadata = dict(metadata or {})

    @staticmethod
    def _check_labels(labels, n, task):
        if task in Task.CLASSIFICATION:
            labels = np.array(labels, dtype=np.int64)
        else:
            labels = np.array(labels, dtype=np.float64)
        if labels.shape != (n,):
            raise DataMatrixException('Got {} labels for {} samples'.format(labels.size, n))
        if task == Task.BINARY and not np.all((labels == 0) | (labels == 1)):
            raise DataMatrixException('Binary labels must be 0 or 1')
        if task == Task.MULTICLASS:
            if labels.min() < 0 or np.unique(labels).shape[0] < 2:
                raise DataMatrixException('Multiclass labels must cover at least 2 classes numbered from 0')
        if task == Task.REGRESSION and not np.all(np.isfinite(labels)):
            raise DataMatrixException('Regression targets must be finite')
        return labels

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def m(self):
        return self.values.shape[1]

    @property
    def num_classes(self):
        if self.task not in Task.CLASSIFICATION:
            return 0
        return int(self.labels.max()) + 1

    def replace(self, values=None, column_names=None, metadata=None):
        """
        Copy of this matrix with some parts swapped; labels and task are kept
        """
        merged = dict(self.metadata)
        merged.update(metadata or {})
        return DataMatrix(self.values if values is None else values,
                          self.column_names if column_names is None else column_names,
                          labels=self.labels, task=self.task, metadata=merged)


def _parse_cell(cell, row, column):
    """
    Parse one cell: returns a float, or None for a missing or non-finite value
    """
    text = cell.strip()
    if text.lower() in MISSING_TOKENS:
        return None
    try:
        value = float(text)
    except ValueError:
        raise ParseException(row, column)
    if not math.isfinite(value):
        return None
    return value


def _as_number(text):
    try:
        return float(text)
    except ValueError:
        return None


def infer_task(raw_labels):
    """
    Guess the learning task from raw label strings.
    Integer-valued labels with few distinct values are classes, other numbers are regression targets,
    anything non-numeric is a class name.
    """
    numbers = [_as_number(label) for label in raw_labels]
    distinct = set(raw_labels)
    if all(number is not None for number in numbers):
        values = np.array(numbers)
        distinct_values = np.unique(values)
        integral = np.all(values == np.round(values))
        if integral and 2 <= distinct_values.shape[0] <= CLASSIFICATION_MAX_DISTINCT:
            return Task.BINARY if distinct_values.shape[0] == 2 else Task.MULTICLASS
        return Task.REGRESSION
    if len(distinct) < 2:
        raise ValidationException('Labels have a single class: {}'.format(sorted(distinct)))
    return Task.BINARY if len(distinct) == 2 else Task.MULTICLASS


def encode_labels(raw_labels, task=None):
    """
    Turn raw label strings into (labels, task, classes).
    Class labels are numbered 0..C-1 following the sorted class values.
    :param raw_labels: list of label strings as read from the file
    :param task: optional Task override; inferred when None
    :return: tuple of numpy labels, task, list of class values (empty for regression)
    """
    if task is None:
        task = infer_task(raw_labels)
    if task == Task.REGRESSION:
        numbers = [_as_number(label) for label in raw_labels]
        if any(number is None for number in numbers):
            raise ValidationException('Regression targets must be numeric')
        return np.array(numbers, dtype=np.float64), task, []
    if task not in Task.CLASSIFICATION:
        raise ValidationException('Cannot encode labels for task {}'.format(task))
    numbers = [_as_number(label) for label in raw_labels]
    if all(number is not None for number in numbers):
        keys = sorted(set(numbers))
        classes = [int(key) if key == int(key) else key for key in keys]
        index = dict((key, i) for i, key in enumerate(keys))
        labels = [index[number] for number in numbers]
    else:
        classes = sorted(set(raw_labels))
        index = dict((key, i) for i, key in enumerate(classes))
        labels = [index[label] for label in raw_labels]
    if len(classes) < 2:
        raise ValidationException('Labels have a single class: {}'.format(classes))
    if task == Task.BINARY and len(classes) != 2:
        raise ValidationException('Binary task requested but labels have {} classes'.format(len(classes)))
    return np.array(labels, dtype=np.int64), task, classes


@retry_exponential_if_exception_type(TRANSIENT_IO_ERRORS, log)
def read_bytes(path):
    with open(path, 'rb') as f:
        return f.read()


def read_text(path):
    """
    Contents of a UTF-8 file; a leading byte order mark is dropped
    :param path: path of the file
    :return: str
    """
    try:
        data = read_bytes(path)
    except OSError as ex:
        raise DataFileReadException('Cannot read {}: {}'.format(path, ex)) from ex
    try:
        return data.decode('utf-8-sig')
    except UnicodeDecodeError as ex:
        line_number = data.count(b'\n', 0, ex.start) + 1
        raise ParseException(line_number, None, 'not UTF-8 text ({})'.format(ex.reason)) from ex


def load_csv(path, label_column=None, drop_missing=False, task=None):
    """
    Read a UTF-8, comma separated file with a header row into a DataMatrix
    :param path: path of the CSV file
    :param label_column: optional header name of the label column
    :param drop_missing: when True rows with missing cells are dropped, otherwise they raise ParseException
    :param task: optional Task override for the labels
    :return: DataMatrix with columns in file order
    """
    if not os.path.isfile(path):
        raise DataFileNotFoundException('Input file not found: {}'.format(path))
    reader = csv.reader(io.StringIO(read_text(path), newline=''))
    try:
        header = [name.strip() for name in next(reader)]
    except StopIteration:
        raise EmptyDatasetException('{} is empty'.format(path))
    if label_column is not None and label_column not in header:
        raise UnknownLabelColumnException('Label column {} not in header of {}'.format(label_column, path))
    label_index = header.index(label_column) if label_column is not None else None
    feature_indexes = [i for i in range(len(header)) if i != label_index]
    rows = []
    raw_labels = []
    dropped = 0
    for line_number, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise ParseException(line_number, None, 'expected {} cells, found {}'.format(len(header), len(row)))
        values = [_parse_cell(row[i], line_number, header[i]) for i in feature_indexes]
        label = row[label_index].strip() if label_index is not None else None
        missing = [header[i] for i, value in zip(feature_indexes, values) if value is None]
        if label_index is not None and label.lower() in MISSING_TOKENS:
            missing.append(label_column)
        if missing:
            if not drop_missing:
                raise ParseException(line_number, missing[0], 'missing value')
            dropped += 1
            continue
        rows.append(values)
        raw_labels.append(label)
    if not rows:
        raise EmptyDatasetException('{} has no data rows'.format(path))
    if dropped:
        log.warning('Dropped {} rows with missing values from {}'.format(dropped, path))
    column_names = [header[i] for i in feature_indexes]
    metadata = {'source': path, 'dropped_rows': dropped}
    if label_index is None:
        return DataMatrix(rows, column_names, metadata=metadata)
    labels, task, classes = encode_labels(raw_labels, task)
    metadata['classes'] = classes
    log.info('Loaded {} rows x {} features from {} (task {})'.format(len(rows), len(column_names), path, task))
    return DataMatrix(rows, column_names, labels=labels, task=task, metadata=metadata)


def write_csv(X, path, label_column='label'):
    """
    Write a DataMatrix as CSV with a header row; the label column (if any) is written last.
    Class labels are written back as their original class values.
    """
    header = list(X.column_names)
    labels = None
    if X.labels is not None:
        header.append(label_column)
        classes = X.metadata.get('classes')
        if X.task in (Task.BINARY, Task.MULTICLASS) and classes:
            labels = [classes[label] for label in X.labels]
        else:
            labels = X.labels.tolist()
    rows = []
    for i in range(X.n):
        row = [repr(float(value)) for value in X.values[i]]
        if labels is not None:
            row.append(labels[i])
        rows.append(row)
    write_csv_atomic(path, header, rows)


def standardize(X):
    """
    Scale every column to sample mean 0 and sample standard deviation 1 (n-1 denominator).
    Constant columns become all-zero and are listed in metadata['zero_variance'].
    """
    mean = X.values.mean(axis=0)
    std = X.values.std(axis=0, ddof=1)
    zero = std <= ZERO_VARIANCE_TOLERANCE * np.maximum(1.0, np.abs(mean))
    scaled = (X.values - mean) / np.where(zero, 1.0, std)
    scaled[:, zero] = 0.0
    flagged = [X.column_names[i] for i in np.flatnonzero(zero)]
    if flagged:
        log.warning('Zero-variance columns mapped to 0: {}'.format(', '.join(flagged)))
    return X.replace(values=scaled, metadata={'standardized': True, 'zero_variance': flagged})


def synth_blocks(n, block_sizes, intra_corr, seed, block_order=None):
    """
    Seeded synthetic data made of blocks of equally correlated features.
    Each block shares one latent factor: x = sqrt(c) * z + sqrt(1 - c) * noise, so features within a block
    correlate at about c and features in different blocks are independent. Every block draws from its own
    child seed, which makes a permuted block_order a column permutation of the default layout.
    :param n: number of samples
    :param block_sizes: list of block sizes
    :param intra_corr: within-block correlation in [0, 1)
    :param seed: integer seed
    :param block_order: optional order in which blocks are laid out
    :return: DataMatrix whose metadata['blocks'] maps each column to its block
    """
    if not 0.0 <= intra_corr < 1.0:
        raise InvalidCorrelationException('Intra-block correlation must be in [0, 1), got {}'.format(intra_corr))
    if not block_sizes or any(size < 1 for size in block_sizes):
        raise ValidationException('Block sizes must all be at least 1, got {}'.format(block_sizes))
    children = np.random.SeedSequence(seed).spawn(len(block_sizes))
    blocks = []
    for size, child in zip(block_sizes, children):
        rng = np.random.default_rng(child)
        latent = rng.standard_normal(n)
        noise = rng.standard_normal((n, size))
        blocks.append(math.sqrt(intra_corr) * latent[:, None] + math.sqrt(1.0 - intra_corr) * noise)
    if block_order is None:
        layout = list(range(len(block_sizes)))
    else:
        layout = check_permutation(block_order, len(block_sizes)).tolist()
    values = np.hstack([blocks[b] for b in layout])
    names = ['b{}_f{}'.format(b, i) for b in layout for i in range(block_sizes[b])]
    membership = [b for b in layout for _ in range(block_sizes[b])]
    return DataMatrix(values, names, metadata={'blocks': membership, 'seed': seed})


def synth_low_rank(n, m, rank, seed):
    """
    Exactly low-rank data, e.g. the m >> n shape of microarray benchmarks
    """
    rng = np.random.default_rng(seed)
    factors = rng.standard_normal((n, rank))
    loadings = rng.standard_normal((rank, m))
    names = ['g{}'.format(i) for i in range(m)]
    return DataMatrix(factors @ loadings, names, metadata={'rank': rank, 'seed': seed})


def synth_separable(n, m, seed, margin=0.5, task=Task.BINARY):
    """
    Labelled toy data. Binary: the class is the side of the hyperplane sum(x) = 0, with samples closer than
    margin to it rejected so the classes are separated by a gap. Regression: the target is the first feature.
    """
    rng = np.random.default_rng(seed)
    direction = np.ones(m) / math.sqrt(m)
    kept = []
    count = 0
    while count < n:
        batch = rng.standard_normal((2 * n, m))
        if task == Task.BINARY:
            batch = batch[np.abs(batch @ direction) > margin]
        kept.append(batch)
        count += batch.shape[0]
    values = np.vstack(kept)[:n]
    if task == Task.BINARY:
        labels = (values @ direction > 0).astype(np.int64)
        metadata = {'classes': [0, 1]}
    elif task == Task.REGRESSION:
        labels = values[:, 0].copy()
        metadata = {}
    else:
        raise ValidationException('Toy data supports binary or regression tasks, got {}'.format(task))
    names = ['x{}'.format(i) for i in range(m)]
    return DataMatrix(values, names, labels=labels, task=task, metadata=metadata)
