from unittest import TestCase
from unittest.mock import patch
import os
import tempfile

import numpy as np

from dynorder.dataset import DataMatrix, DataMatrixException, DataFileNotFoundException, DataFileReadException
from dynorder.dataset import EmptyDatasetException
from dynorder.dataset import ParseException, UnknownLabelColumnException, InvalidCorrelationException, Task
from dynorder.dataset import load_csv, write_csv, standardize, infer_task, encode_labels
from dynorder.dataset import synth_blocks, synth_low_rank, synth_separable
from dynorder.permutation import NotAPermutationException, check_permutation, positions, inverse_permutation


class CsvFileTestCase(TestCase):

    def setUp(self):
        self.directory = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.directory.cleanup()

    def write(self, text, name='data.csv'):
        path = os.path.join(self.directory.name, name)
        with open(path, 'w', encoding='utf-8') as f:
            f.write(text)
        return path


class LoadCsvTestCase(CsvFileTestCase):

    def test_loads_features_and_class_labels(self):
        path = self.write('a,class,b\n1,setosa,2\n3,virginica,4\n5,setosa,6\n')
        X = load_csv(path, 'class')
        self.assertEqual(X.column_names, ['a', 'b'])
        self.assertEqual((X.n, X.m), (3, 2))
        self.assertEqual(X.task, Task.BINARY)
        self.assertEqual(X.labels.tolist(), [0, 1, 0])
        self.assertEqual(X.metadata['classes'], ['setosa', 'virginica'])
        np.testing.assert_array_equal(X.values, [[1, 2], [3, 4], [5, 6]])

    def test_three_classes_are_multiclass(self):
        path = self.write('a,b,y\n1,2,0\n3,4,1\n5,6,2\n7,8,1\n')
        X = load_csv(path, 'y')
        self.assertEqual(X.task, Task.MULTICLASS)
        self.assertEqual(X.num_classes, 3)

    def test_real_targets_are_regression(self):
        path = self.write('a,b,y\n1,2,0.5\n3,4,1.25\n5,6,2.0\n')
        X = load_csv(path, 'y')
        self.assertEqual(X.task, Task.REGRESSION)
        self.assertEqual(X.num_classes, 0)

    def test_no_label_column(self):
        path = self.write('a,b\n1,2\n3,4\n')
        X = load_csv(path)
        self.assertIsNone(X.labels)
        self.assertEqual(X.task, Task.NONE)

    def test_missing_file(self):
        with self.assertRaises(DataFileNotFoundException) as context:
            load_csv(os.path.join(self.directory.name, 'nope.csv'))
        self.assertEqual(context.exception.exit_code, 2)

    def test_header_only_file_is_empty(self):
        with self.assertRaises(EmptyDatasetException):
            load_csv(self.write('a,b\n'))

    def test_unknown_label_column(self):
        with self.assertRaises(UnknownLabelColumnException):
            load_csv(self.write('a,b\n1,2\n3,4\n'), 'class')

    def test_non_numeric_cell_reports_row_and_column(self):
        path = self.write('a,b\n1,2\n3,x\n')
        with self.assertRaises(ParseException) as context:
            load_csv(path)
        self.assertEqual(context.exception.row, 3)
        self.assertEqual(context.exception.column, 'b')
        self.assertEqual(context.exception.exit_code, 3)

    def test_missing_value_raises_unless_dropped(self):
        path = self.write('a,b\n1,2\n3,NA\n5,6\n7,8\n')
        with self.assertRaises(ParseException):
            load_csv(path)
        X = load_csv(path, drop_missing=True)
        self.assertEqual(X.n, 3)
        self.assertEqual(X.metadata['dropped_rows'], 1)

    def test_write_then_load_keeps_class_values(self):
        X = load_csv(self.write('a,b,class\n1,2,cat\n3,4,dog\n'), 'class')
        out = os.path.join(self.directory.name, 'out.csv')
        write_csv(X, out, 'class')
        with open(out) as f:
            self.assertEqual(f.readline().strip(), 'a,b,class')
        reloaded = load_csv(out, 'class')
        self.assertEqual(reloaded.metadata['classes'], ['cat', 'dog'])
        np.testing.assert_array_equal(reloaded.values, X.values)

    def write_bytes(self, data, name='data.csv'):
        path = os.path.join(self.directory.name, name)
        with open(path, 'wb') as f:
            f.write(data)
        return path

    def test_byte_order_mark_is_dropped_from_header(self):
        X = load_csv(self.write_bytes(b'\xef\xbb\xbfy,a,b\n0,1,2\n1,3,4\n'), 'y')
        self.assertEqual(X.column_names, ['a', 'b'])
        self.assertEqual(X.labels.tolist(), [0, 1])

    def test_invalid_utf8_is_parse_error_with_line(self):
        path = self.write_bytes(b'a,b\n1,2\n\xff\xfe,3\n')
        with self.assertRaises(ParseException) as context:
            load_csv(path)
        self.assertEqual(context.exception.row, 3)
        self.assertIsNone(context.exception.column)
        self.assertEqual(context.exception.exit_code, 3)

    @patch('dynorder.dataset.read_bytes')
    def test_unreadable_file_is_io_error(self, mock_read_bytes):
        mock_read_bytes.side_effect = PermissionError('denied')
        path = self.write('a,b\n1,2\n3,4\n')
        with self.assertRaises(DataFileReadException) as context:
            load_csv(path)
        self.assertEqual(context.exception.exit_code, 2)
        mock_read_bytes.assert_called_once_with(path)


class LabelsTestCase(TestCase):

    def test_infer_task(self):
        self.assertEqual(infer_task(['0', '1', '1']), Task.BINARY)
        self.assertEqual(infer_task(['a', 'b', 'c']), Task.MULTICLASS)
        self.assertEqual(infer_task(['0.1', '2', '3']), Task.REGRESSION)

    def test_encode_sorts_numeric_classes(self):
        labels, task, classes = encode_labels(['5', '3', '5'])
        self.assertEqual(labels.tolist(), [1, 0, 1])
        self.assertEqual(classes, [3, 5])
        self.assertEqual(task, Task.BINARY)


class DataMatrixTestCase(TestCase):

    def test_values_are_frozen_copies(self):
        values = np.ones((3, 2))
        X = DataMatrix(values, ['a', 'b'])
        values[0, 0] = 5
        self.assertEqual(X.values[0, 0], 1)
        with self.assertRaises(ValueError):
            X.values[0, 0] = 2

    def test_rejects_non_finite_values(self):
        with self.assertRaises(DataMatrixException):
            DataMatrix([[1.0, np.nan], [2.0, 3.0]], ['a', 'b'])

    def test_rejects_wrong_name_count(self):
        with self.assertRaises(DataMatrixException):
            DataMatrix(np.ones((3, 2)), ['a'])

    def test_replace_keeps_labels(self):
        X = DataMatrix(np.ones((2, 2)), ['a', 'b'], labels=[0, 1], task=Task.BINARY, metadata={'source': 's'})
        Y = X.replace(values=np.zeros((2, 2)), metadata={'standardized': True})
        self.assertEqual(Y.labels.tolist(), [0, 1])
        self.assertEqual(Y.metadata, {'source': 's', 'standardized': True})


class StandardizeTestCase(TestCase):

    def test_sample_mean_zero_and_unit_std(self):
        X = synth_low_rank(50, 5, 5, seed=1)
        Z = standardize(X)
        np.testing.assert_allclose(Z.values.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(Z.values.std(axis=0, ddof=1), 1.0, rtol=1e-12)

    def test_standardizing_twice_changes_nothing(self):
        X = synth_blocks(50, [2, 3], 0.6, seed=4)
        once = standardize(X)
        np.testing.assert_allclose(standardize(once).values, once.values, atol=1e-10)

    def test_constant_column_becomes_zero(self):
        X = DataMatrix([[1.0, 7.0], [2.0, 7.0], [3.0, 7.0]], ['a', 'const'])
        Z = standardize(X)
        np.testing.assert_array_equal(Z.values[:, 1], 0.0)
        self.assertEqual(Z.metadata['zero_variance'], ['const'])


class SyntheticDataTestCase(TestCase):

    def test_blocks_correlate_within_but_not_across(self):
        X = synth_blocks(4000, [3, 3], 0.8, seed=0)
        corr = np.corrcoef(X.values, rowvar=False)
        self.assertAlmostEqual(corr[0, 1], 0.8, delta=0.05)
        self.assertAlmostEqual(corr[0, 4], 0.0, delta=0.05)
        self.assertEqual(X.metadata['blocks'], [0, 0, 0, 1, 1, 1])

    def test_same_seed_same_data(self):
        np.testing.assert_array_equal(synth_blocks(20, [2, 2], 0.5, 7).values, synth_blocks(20, [2, 2], 0.5, 7).values)

    def test_block_order_permutes_columns(self):
        default = synth_blocks(30, [2, 3], 0.5, 3)
        swapped = synth_blocks(30, [2, 3], 0.5, 3, block_order=[1, 0])
        np.testing.assert_array_equal(swapped.values, default.values[:, [2, 3, 4, 0, 1]])
        self.assertEqual(swapped.metadata['blocks'], [1, 1, 1, 0, 0])

    def test_rejects_correlation_of_one(self):
        with self.assertRaises(InvalidCorrelationException):
            synth_blocks(10, [2], 1.0, 0)

    def test_low_rank_has_rank(self):
        X = synth_low_rank(20, 40, 3, seed=2)
        self.assertEqual(np.linalg.matrix_rank(X.values), 3)

    def test_separable_classes_respect_margin(self):
        X = synth_separable(200, 3, seed=0, margin=1.0)
        projection = X.values.sum(axis=1) / np.sqrt(3)
        self.assertTrue(np.all(np.abs(projection) > 1.0))
        np.testing.assert_array_equal(X.labels, (projection > 0).astype(int))


class PermutationTestCase(TestCase):

    def test_check_permutation(self):
        self.assertEqual(check_permutation([2, 0, 1], 3).tolist(), [2, 0, 1])
        for bad in ([0, 0, 1], [0, 1], [0, 1, 3], [-1, 0, 1]):
            with self.assertRaises(NotAPermutationException):
                check_permutation(bad, 3)

    def test_positions_and_inverse(self):
        order = np.array([2, 0, 1])
        self.assertEqual(positions(order).tolist(), [1, 2, 0])
        self.assertEqual(order[inverse_permutation(order)].tolist(), [0, 1, 2])
