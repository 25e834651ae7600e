import contextlib
import csv
import io
import json
import logging
import os
import tempfile
import threading
from datetime import datetime

import numpy as np

from dynorder.errors import DataIOException
from dynorder.retry import retry_exponential_if_exception_type, TRANSIENT_IO_ERRORS

log = logging.getLogger("dynorder.report")


class ReportWriteException(DataIOException):
    pass


class TimedReport(object):
    """
    Report on a run stage with a specific start time and finish time.
    """

    def __init__(self, name=None, start_time=None, finish_time=None):
        self.name = name
        self.start_time = start_time
        self.finish_time = finish_time

    def start(self, start_time=None):
        self.start_time = start_time if start_time else datetime.now()

    def finish(self, finish_time=None):
        self.finish_time = finish_time if finish_time else datetime.now()

    def elapsed_seconds(self):
        if self.start_time is None or self.finish_time is None:
            return None
        total_seconds = (self.finish_time - self.start_time).total_seconds()
        if total_seconds < 0:
            raise ValueError('Negative time is not allowed: {}'.format(total_seconds))
        return total_seconds

    def to_dict(self):
        # Drop unset fields
        result = dict((k, v) for k, v in vars(self).items() if v is not None)
        result['elapsed_seconds'] = self.elapsed_seconds()
        return result


class TimelineReport(TimedReport):
    """
    A TimedReport over child stage reports.
    Start and finish follow the earliest and latest child; parallel stages (e.g. per-cluster rewiring)
    are counted by sweeping start and finish events.
    """

    def __init__(self, *args, **kwargs):
        self.children = []
        super(TimelineReport, self).__init__(*args, **kwargs)

    def add_report(self, report):
        self.children.append(report)
        starts = [c.start_time for c in self.children if c.start_time]
        if starts:
            self.start_time = min(starts)
        finishes = [c.finish_time for c in self.children if c.finish_time]
        if finishes:
            self.finish_time = max(finishes)

    def total_stages(self):
        return len(self.children)

    def max_parallel_stages(self):
        # A stage finishing at the same instant another starts does not overlap it
        events = []
        for child in self.children:
            if child.start_time and child.finish_time:
                events.append((child.start_time, 1))
                events.append((child.finish_time, -1))
        count = 0
        peak = 0
        for _, step in sorted(events, key=lambda event: (event[0], event[1])):
            count += step
            peak = max(peak, count)
        return peak

    def to_dict(self):
        result = super(TimelineReport, self).to_dict()
        result['total_stages'] = self.total_stages()
        result['max_parallel_stages'] = self.max_parallel_stages()
        result['children'] = [child.to_dict() for child in self.children]
        return result


class Reporter(object):
    """
    Singleton thread-safe collector of stage timings for --usage-report
    """
    timeline_report = TimelineReport(name='run')
    lock = threading.Lock()

    @staticmethod
    def initialize(name='run'):
        with Reporter.lock:
            Reporter.timeline_report = TimelineReport(name=name)

    @staticmethod
    def add_report(report):
        with Reporter.lock:
            Reporter.timeline_report.add_report(report)

    @staticmethod
    def get_report():
        with Reporter.lock:
            return Reporter.timeline_report


@contextlib.contextmanager
def timed_stage(name):
    """
    Time the enclosed block and record it with the Reporter
    """
    report = TimedReport(name=name)
    report.start()
    try:
        yield report
    finally:
        report.finish()
        Reporter.add_report(report)
        log.debug('Stage {} took {}s'.format(name, report.elapsed_seconds()))


def default_serializer(obj):
    """
    Function to handle JSON serialization of objects that cannot be natively serialized
    :param obj: object to seralize
    :return: JSON-compatible representation of object
    """
    if isinstance(obj, datetime):
        return obj.isoformat()
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if hasattr(obj, 'to_json'):
        return obj.to_json()
    raise TypeError("Type %s not serializable" % type(obj))


@retry_exponential_if_exception_type(TRANSIENT_IO_ERRORS, log)
def _replace_into(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    handle, temp_path = tempfile.mkstemp(dir=directory, prefix='.dynorder-', suffix='.tmp')
    try:
        with os.fdopen(handle, 'w', encoding='utf-8', newline='') as f:
            f.write(text)
        os.replace(temp_path, path)
    except BaseException:
        if os.path.exists(temp_path):
            os.remove(temp_path)
        raise


def write_text_atomic(path, text):
    """
    Write text to path through a temporary file in the same directory and a rename,
    so readers never see a partial file
    """
    try:
        _replace_into(path, text)
    except OSError as ex:
        raise ReportWriteException('Unable to write {}: {}'.format(path, ex)) from ex


def to_json_text(obj):
    return json.dumps(obj, indent=4, default=default_serializer) + '\n'


def write_json_atomic(path, obj):
    write_text_atomic(path, to_json_text(obj))


def to_csv_text(header, rows):
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


def write_csv_atomic(path, header, rows):
    write_text_atomic(path, to_csv_text(header, rows))


def write_json_lines_atomic(path, records):
    text = ''.join(json.dumps(record, default=default_serializer) + '\n' for record in records)
    write_text_atomic(path, text)


def initialize_reporter(name='run'):
    Reporter.initialize(name)


def write_report(filename):
    write_json_atomic(filename, Reporter.get_report().to_dict())
