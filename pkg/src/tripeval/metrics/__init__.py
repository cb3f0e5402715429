"""Utility metrics comparing synthetic trips against raw trips."""

from .flows import ClusterSet, FlowCluster, LinkedCluster, cluster_flows, dcg, hausdorff_matrix, link_clusters, ndcg_flows
from .lengths import LengthStats, length_stats
from .preference import Classification, PreferenceScores, classify_preferences, frequent_cells, nearest_rank, preference_scores
from .survey import SurveyMatrix, SurveySelection, agreement, krippendorff_alpha, select_survey_roads
from .volume import JSD_LOG_BASE, jsd, jsd_counts

__all__ = [
    "ClusterSet",
    "Classification",
    "FlowCluster",
    "JSD_LOG_BASE",
    "LengthStats",
    "LinkedCluster",
    "PreferenceScores",
    "SurveyMatrix",
    "SurveySelection",
    "agreement",
    "classify_preferences",
    "cluster_flows",
    "dcg",
    "frequent_cells",
    "hausdorff_matrix",
    "jsd",
    "jsd_counts",
    "krippendorff_alpha",
    "length_stats",
    "link_clusters",
    "ndcg_flows",
    "nearest_rank",
    "preference_scores",
    "select_survey_roads",
]
