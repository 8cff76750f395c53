"""Structural CNN filter pruning by information capacity and independence."""

from .archive import (ArchiveError, LayerSpec, ModelManifest, TensorRecord,
                      load_archive, manifest_hash, propagate_shapes,
                      save_archive, validate)
from .scoring import (ScoreTable, ScoringConfig, ScoringError, filter_entropy,
                      information_capacity, information_independence,
                      kernel_probabilities, kernel_similarity, score_layer,
                      score_model)
from .planner import (PlanError, PruningPlan, PruningRates, build_plan,
                      keep_count, select_filters)
from .applier import ApplyError, PrunedModel, apply_plan, save_pruned
from .costs import (CostReport, DiagnosticsError, PlanCostReport, correlate,
                    count_costs, evaluate_plan_costs, feature_rank,
                    gram_entropy, renyi_matrix_entropy)
from .refnet import ChannelMask, ForwardError, capture_feature_maps, forward

__all__ = [name for name in dir() if not name.startswith("_")]
