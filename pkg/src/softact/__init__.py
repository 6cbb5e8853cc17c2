"""Soft-label training for verb-noun action anticipation.

Instead of one-hot targets, training targets are blended with a prior over
related actions — uniform, verb/noun cohort, embedding similarity,
temporal co-occurrence, or mixtures — and a multi-branch LSTM
encoder-decoder is trained on the smoothed targets to predict upcoming
actions at several anticipation times.
"""

from .errors import FormatError, ParseError, TrainingDiverged
from .experiment import (DEFAULT_ALPHAS, AlphaGrid, Dataset, ExperimentConfig,
                         GridPoint, GridSearchResult, MethodSpec, TrainResult,
                         build_prior_for_kind, default_methods,
                         evaluate_model, generate_dataset, grid_search_alpha,
                         grid_to_csv, load_dataset, load_experiment_config,
                         method_kind, run_comparison, run_trial, save_dataset,
                         save_experiment_config, split_dataset,
                         transition_counts_from_pairs, train_model)
from .metrics import (ManyShotSets, MetricCell, MetricsReport,
                      aggregate_trials, build_report, compute_many_shot,
                      macro_precision_recall, many_shot_from_labels,
                      marginalize_to_verb_noun, parse_report_csv,
                      report_to_csv, report_to_plotdata, report_to_table,
                      top1_ids, topk_accuracy)
from .priors import (EmbeddingTable, PriorMatrix, TransitionCounts,
                     build_glove_prior, build_temporal_prior,
                     build_uniform_prior, build_verb_noun_prior,
                     count_transitions, embed_action, load_embeddings,
                     load_prior, mix_priors, prior_from_transition_counts,
                     save_prior)
from .seqmodel import (ModelConfig, ModelParams, ProtocolConfig,
                       StepPredictions, adam_step, forward, forward_batch,
                       init_params, load_checkpoint, loss_and_gradients,
                       loss_and_gradients_batch, predict_topk,
                       save_checkpoint, topk_ids, weight_shapes)
from .smoothing import (SmoothingConfig, SoftLabel, one_hot, smooth_label,
                        smooth_label_matrix, soft_cross_entropy, softmax)
from .synthdata import (FeatureSet, GrammarConfig, SyntheticGrammar,
                        gen_annotation_sequences, gen_features, gen_grammar,
                        gen_synthetic_embeddings, grammar_from_json_dict,
                        read_features, sample_transition_pairs,
                        write_features)
from .vocab import (ActionInstance, ActionVocab, AnnotationSet, build_vocab,
                    format_annotations, parse_annotations)

__version__ = "0.1.0"

__all__ = [
    "ActionInstance", "ActionVocab", "AlphaGrid", "AnnotationSet", "Dataset",
    "DEFAULT_ALPHAS", "EmbeddingTable", "ExperimentConfig", "FeatureSet",
    "FormatError", "GrammarConfig", "GridPoint", "GridSearchResult",
    "ManyShotSets",
    "MethodSpec", "MetricCell", "MetricsReport", "ModelConfig", "ModelParams",
    "ParseError", "PriorMatrix", "ProtocolConfig", "SmoothingConfig",
    "SoftLabel", "StepPredictions", "SyntheticGrammar", "TrainResult",
    "TrainingDiverged", "TransitionCounts", "adam_step", "aggregate_trials",
    "build_glove_prior", "build_prior_for_kind", "build_report",
    "build_temporal_prior", "build_uniform_prior", "build_verb_noun_prior",
    "build_vocab", "compute_many_shot", "count_transitions",
    "default_methods", "embed_action", "evaluate_model", "format_annotations",
    "forward", "forward_batch", "gen_annotation_sequences", "gen_features",
    "gen_grammar", "gen_synthetic_embeddings", "generate_dataset",
    "grammar_from_json_dict", "grid_search_alpha", "grid_to_csv",
    "init_params", "load_checkpoint", "load_dataset", "load_embeddings",
    "load_experiment_config", "load_prior", "loss_and_gradients",
    "loss_and_gradients_batch", "macro_precision_recall",
    "many_shot_from_labels", "marginalize_to_verb_noun", "method_kind",
    "mix_priors", "one_hot", "parse_annotations", "parse_report_csv",
    "predict_topk", "prior_from_transition_counts", "read_features",
    "report_to_csv", "report_to_plotdata", "report_to_table",
    "run_comparison", "run_trial", "sample_transition_pairs",
    "save_checkpoint", "save_dataset", "save_experiment_config", "save_prior",
    "smooth_label", "smooth_label_matrix", "soft_cross_entropy", "softmax",
    "split_dataset", "top1_ids",
    "topk_accuracy", "topk_ids",
    "weight_shapes",
    "transition_counts_from_pairs", "train_model", "write_features",
]
