"""Multi-feedback collaborative filtering in one unified ordinal embedding space.

Implicit feedback signals are mapped to ordered engagement categories,
nested twin-tower encoders are trained under a proportional-odds loss with
per-level subtasks, and the resulting single embedding space serves exact
top-K retrieval for every feedback target at once.
"""

from .data import (
    DataConfig,
    DatasetBundle,
    RawInteraction,
    apply_bins,
    binarize_ratings,
    build_bundle,
    build_lists,
    chronological_split,
    fit_bins,
    load_bundle,
    make_batches,
    save_bundle,
)
from .encoders import (
    EmbeddingTableSet,
    NestedEmbedding,
    NestedTwinEncoder,
    Tower,
    TowerConfig,
    embed_features,
    nested_kernel,
    read_embeddings,
    write_embeddings,
)
from .errors import GnolrError
from .feedback import (
    FeedbackSchema,
    ThresholdSet,
    estimate_thresholds,
    map_to_ordinal,
    order_feedback,
    remap_for_subtask,
    thresholds_from_fractions,
)
from .losses import (
    CategoryDistribution,
    GnolrHyper,
    bce_loss,
    category_distribution,
    combined_loss,
    cumulative_prob,
    gnolr_total_loss,
    listnet_loss,
    neural_olr_loss,
    subtask_loss,
    task_score,
)
from .metrics import (
    RetrievalIndex,
    ScoredSample,
    angle_histogram,
    auc,
    gauc,
    recall_at_k,
    topk_retrieve,
)
from .models import Batch, ModelConfig, make_model
from .tensor import (
    AdamConfig,
    Parameter,
    adam_step,
    cosine_kernel,
    finite_diff_check,
    l2_normalize,
    leaky_relu,
    stable_sigmoid,
)
from .training import (
    Checkpoint,
    TrainConfig,
    evaluate,
    load_checkpoint,
    multi_run,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
