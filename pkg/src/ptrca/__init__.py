"""Partial trajectory regression: predict wafer defect density from process
trajectories and attribute it to individual steps."""

from .attribute import (AttributionReport, FleetSummary, aggregate_fleet, attribute, attribution_scores,
                        cumulative_series, rank_processes)
from .ingest import (DEFAULT_SCHEMA, LabeledDataset, ProcessStep, TokenDictionary, Trajectory, attach_labels,
                     build_dictionary, build_token, parse_history)
from .kernel import KernelMatrix, KernelParams, blended_kernel, kernel_matrix, normalized_kernel, subseq_kernel_p
from .proc2vec import EigenSystem, EmbeddingTable, baseline_embedding, eigendecompose, embed_tokens
from .regress import Metrics, Model, TrainConfig, evaluate, loss, predict, train
from .route2vec import PartialStateSequence, TemporalConfig, encode_states, temporal_weight
from .synth import GroundTruth, SynthConfig, generate_fab, oracle_effect

__version__ = "0.1.0"
