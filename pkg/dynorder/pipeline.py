import logging

from dynorder.dataset import standardize
from dynorder.executor import ClusterRewiringExecutor
from dynorder.fusion import importance_scores
from dynorder.global_order import aggregate, coherence_penalty
from dynorder.graph import build_graphs, cluster_alphas, kmeans
from dynorder.report import timed_stage
from dynorder.rewiring import Direction

log = logging.getLogger("dynorder.pipeline")


class OrderingResult(object):
    """
    Everything order_features produced: the global ordering plus the intermediate clusters and graphs
    """

    def __init__(self, ordering, standardized, assignment, graphs, rewired):
        self.ordering = ordering
        self.standardized = standardized
        self.assignment = assignment
        self.graphs = graphs
        self.rewired = rewired

    @property
    def trace(self):
        return [record for local in self.ordering.local for record in local.trace]


def order_features(X, cfg):
    """
    Data-driven column order: standardize, cluster the samples, build one feature graph per cluster, rewire each
    graph into a local order, then merge the local orders with weights from the cluster geometry.
    Local orders already carry the configured direction, so the merge keeps their orientation.
    :param X: DataMatrix
    :param cfg: RunConfig
    :return: OrderingResult
    """
    with timed_stage('standardize'):
        standardized = standardize(X)
    with timed_stage('cluster'):
        assignment = kmeans(standardized, cfg.clusters, cfg.seed)
    with timed_stage('build graphs'):
        graphs = build_graphs(standardized, assignment, cfg.metric, cfg.kl_bins)
        alphas = cluster_alphas(assignment.centroids, cfg.alpha_eps)
    rewiring = cfg.rewiring_config()
    configs = [rewiring.for_cluster(graph.cluster_id) for graph in graphs]
    with timed_stage('rewire'):
        results = ClusterRewiringExecutor(cfg.workers).run(graphs, configs)
    rewired = [graph for graph, _ in results]
    locals_ = [local for _, local in results]
    with timed_stage('aggregate'):
        ordering = aggregate(locals_, alphas, Direction.ASCENDING, graphs=rewired)
    ordering.coherence = coherence_penalty(ordering.order, assignment.centroids.T, cfg.alpha_eps)
    ordering.importance = importance_scores(rewired, alphas)
    ordering.column_names = [X.column_names[f] for f in ordering.order]
    log.info('Global order over {} features from {} clusters: score {:.6g}, coherence {:.6g}'.format(
        X.m, assignment.k, ordering.score, ordering.coherence))
    return OrderingResult(ordering, standardized, assignment, graphs, rewired)
