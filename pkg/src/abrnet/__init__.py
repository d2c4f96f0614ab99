"""Adversarial bi-regressor network for unsupervised domain-adaptive regression."""
from .augment import MixedBatchPair, mix_domains
from .baselines import METHOD_NAMES, MethodSpec, train_ablation, train_dann_lite, train_mcd_lite, \
    train_method, train_source_only
from .datagen import EnvironmentSpec, ImageTaskSpec, generate_image_task, make_domain_pair
from .dataset import DomainDataset, load_dataset, save_dataset
from .evaluation import GridErrorMap, evaluate, grid_error_map, lambda_sweep
from .exceptions import CheckpointError, ConfigError, ContractError, LabelAccessError, NumericError
from .losses import adversarial_loss, regression_loss, soft_similarity
from .models import ModelBundle, ModelConfig, RegressorOutput, build_models, extract_features, \
    forward_discriminator, forward_regressor
from .report import emit_report, load_report
from .trainer import TrainConfig, TrainHistory, TrainingPlan, load_checkpoint, save_checkpoint, step1, step2, \
    step3, train

__version__ = "0.1.0"
