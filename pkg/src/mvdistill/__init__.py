"""Multi-view knowledge distillation with text-embedding-guided fusion."""

from .data import SyntheticDatasetSpec, build_view_arrays, generate_synthetic_dataset
from .embeddings import (
    EmbeddingTable,
    PromptTemplateSet,
    WeightNet,
    fuse_batch,
    fuse_features,
    load_embeddings,
    lookup_class_embeddings,
    weightnet_forward,
    write_embeddings,
)
from .losses import (
    DistillConfig,
    LossReport,
    crd_loss,
    feature_loss,
    logit_loss,
    perturb_teacher_feature,
    total_loss,
)
from .models import MlpNet, Projector, load_checkpoint, mlp_from_checkpoint, save_checkpoint
from .tensor import Tensor
from .training import (
    DistillResult,
    TrainConfig,
    distill,
    evaluate,
    pretrain_teacher,
    sgd_step,
)
from .views import (
    RgbImage,
    ViewGenConfig,
    ViewImage,
    canny_channel,
    edge_view,
    gaussian_blur,
    hf_view,
    read_ppm,
    write_ppm,
)
