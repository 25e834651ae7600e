import functools
import logging
from concurrent.futures import ThreadPoolExecutor, wait, FIRST_COMPLETED, ALL_COMPLETED
from queue import Queue

from dynorder.errors import DynorderException
from dynorder.report import Reporter, TimedReport
from dynorder.rewiring import rewire_local

log = logging.getLogger("dynorder.executor")


class RewiringFailedException(DynorderException):
    pass


class IncompleteResultsException(DynorderException):
    pass


class ClusterRewiringExecutor(object):
    """
    Runs rewire_local for every cluster on a concurrent.futures.ThreadPoolExecutor.

    Clusters are independent and each run is seeded from its own config, so results do not depend on scheduling.
    Results are collected by cluster id and returned in cluster order.
    """

    def __init__(self, max_workers=None):
        """
        :param max_workers: Number of worker threads. None uses Python's default for ThreadPoolExecutor.
        """
        self.max_workers = max_workers
        self.exceptions = Queue()
        self.results = {}

    def rewire_cluster(self, graph, cfg):
        report = TimedReport(name='rewire cluster {}'.format(graph.cluster_id))
        report.start()
        try:
            return rewire_local(graph, cfg)
        finally:
            report.finish()
            Reporter.add_report(report)

    def cluster_done_callback(self, cluster_id, future):
        """
        Callback run on a background thread when a cluster finishes. Exceptions raised inside a callback are only
        logged by concurrent.futures, so they are queued here and re-raised from the main thread.
        :param cluster_id: cluster whose rewiring finished
        :param future: A concurrent.futures.Future. May be in cancelled or done states
        """
        if future.cancelled():
            return
        if future.exception():
            self.exceptions.put(future.exception())
        else:
            # dict assignment of distinct keys is atomic, no lock needed
            self.results[cluster_id] = future.result()

    def raise_if_exception_queued(self, futures):
        """
        Raise a queued exception from cluster_done_callback, cancelling outstanding futures first
        :param futures: set of futures to cancel if we're about to raise
        """
        if self.exceptions.empty():
            return
        log.error('Found a queued exception, canceling outstanding clusters')
        for f in futures:
            f.cancel()
        wait(futures, return_when=ALL_COMPLETED)
        exceptions = []
        while not self.exceptions.empty():
            exceptions.append(self.exceptions.get())
        if len(exceptions) == 1:
            try:
                raise exceptions[0]
            except DynorderException:
                raise
            except Exception as err:
                log.exception('Cluster rewiring failed')
                raise RewiringFailedException(str(err)) from err
        raise RewiringFailedException(str(exceptions)) from exceptions[0]

    def submit_clusters(self, pool_executor, graphs, configs):
        futures = set()
        for graph, cfg in zip(graphs, configs):
            future = pool_executor.submit(self.rewire_cluster, graph, cfg)
            future.add_done_callback(functools.partial(self.cluster_done_callback, graph.cluster_id))
            futures.add(future)
        return futures

    def run(self, graphs, configs):
        """
        Rewire every graph with its config
        :param graphs: list of FeatureGraph
        :param configs: list of RewiringConfig aligned with graphs
        :return: list of (rewired FeatureGraph, LocalOrdering) in the order of graphs
        """
        log.debug('Starting ClusterRewiringExecutor.run: clusters={}, max_workers={}'.format(
            len(graphs), self.max_workers))
        with ThreadPoolExecutor(max_workers=self.max_workers) as pool_executor:
            futures = self.submit_clusters(pool_executor, graphs, configs)
            while futures:
                futures = wait(futures, return_when=FIRST_COMPLETED).not_done
                self.raise_if_exception_queued(futures)
        # Callbacks of the last futures may still be running when wait returns
        self.raise_if_exception_queued(set())
        missing = [graph.cluster_id for graph in graphs if graph.cluster_id not in self.results]
        if missing:
            raise IncompleteResultsException('No rewiring result for clusters {}'.format(missing))
        return [self.results[graph.cluster_id] for graph in graphs]
