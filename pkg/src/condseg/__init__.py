"""Two-stage contrast-driven medical image segmentation on torch."""

from .core import (
    AugPolicy, ConfigError, ParamStore, SynthSpec, TrainConfig, load_config, save_config,
    seeded_rng, validate_config,
)
from .losses import (
    LossValue, bce_loss, binarize, complementarity_loss, consistency_loss, dice_loss,
    dynamic_penalties, mask_loss, stage1_loss, stage2_loss,
)
from .augment import simple_augment, strong_augment
from .backbone import Net0, encode, make_encoder, make_net0, net0_forward
from .sid import SID, AuxHead, DecoupledFeatures, aux_head, sid_forward
from .cdfa import CDFA, CDFAStack, cdfa_forward, cdfa_reference, cdfa_stack, pre_enhance
from .decoder import SADecoder, sa_decode
from .model import ConDSeg, Stage2Output, condseg_forward, param_groups
from .metrics import METRIC_NAMES, batch_metrics, confusion, dataset_means, image_metrics
from .data import SampleRecord, gen_synthetic, load_dataset_dir, low_contrast_spec, split
from .checkpoint import load_checkpoint, save_checkpoint
from .train import (
    RunResult, TrainingError, evaluate, load_model, run_strategy, train_stage1, train_stage2,
)

__version__ = "0.1.0"
