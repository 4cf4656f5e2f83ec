"""Multi-modal classifier chains: per-instance, cost-aware modality extraction for multi-label prediction."""

from .chain import ChainPlan, build_test_stage, build_train_stage, gini_index, order_labels
from .dataset import (FoldSplit, ModalitySchema, MultiModalDataset, Standardizer,
                      load_dataset, make_folds, make_synthetic, partition_by_info_gain, save_csv)
from .inference import PredictionTrace, cost_average, predict_chain, predict_instance
from .metrics import cv_aggregate, hamming_loss, micro_f1, subset_accuracy
from .training import MCCChain, StageModel, TrainConfig, train_mcc, train_stage

__version__ = "0.1.0"
