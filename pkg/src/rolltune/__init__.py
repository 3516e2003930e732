"""Rollback refine-tuning toolkit: periodically restore high-level network
blocks to their pre-trained weights while low-level blocks keep training,
plus the baseline/control strategies and a CMC/mAP retrieval harness."""

from .data import Dataset, DatasetSpec, SynthData, generate
from .errors import (ContractError, DataFormatError, RolltuneError, ScheduleError,
                     ShapeError, TrainingDiverged, ValidationError)
from .metrics import (FeatureSet, RetrievalReport, cmc, distance_matrix,
                      evaluate_retrieval, extract_features, mean_ap)
from .model import (FC_GROUP, NetworkConfig, NetworkParams, ParamGroup,
                    build_network, clone, forward_classifier, forward_features,
                    forward_logits, parameter_groups, rebuild_classifier)
from .optim import GroupedSGD
from .schedule import (PeriodPlan, ScheduleConfig, SnapshotStore, Strategy,
                       apply_rollback, build_schedule, format_schedule,
                       lr_timeline, period_boundary, restore_blocks, snapshot)
from .tensor import (Tensor, backward, batch_norm, conv2d, global_avg_pool,
                     leaky_relu, matmul, no_grad, softmax, softmax_cross_entropy)
from .train import (TargetData, TrainConfig, TrainLog, augment_flip,
                    classification_accuracy, flip_horizontal, one_hot, pretrain, run)

__version__ = "0.1.0"
