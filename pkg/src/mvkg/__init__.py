"""Logical query answering over multi-view knowledge graphs.

Facts are (head, relation, tail, view) quadruples over one shared entity set.
The package covers the full pipeline: symbolic ground truth (oracle traversal
with view-constraint semantics), view-aware embedding learning (masked
self-attention encoder with parallel relation/view decoders), and
ranking-based evaluation.
"""
from .kg import (
    Fact,
    IngestError,
    MultiViewKG,
    WILDCARD,
    collapse_views,
    generate_toy_kg,
    ingest_quadruples,
    load_kg,
    subset_by_views,
)
from .queries import (
    EQUAL,
    EXACT,
    STRUCTURES,
    TRAIN_STRUCTURES,
    WILDCARD as WILDCARD_KIND,
    Query,
    QueryEdge,
    TrainingSample,
    ViewConstraint,
    build_query,
    equal,
    exact,
    read_queries_jsonl,
    strip_view_constraints,
    wildcard,
    write_queries_jsonl,
)
from .oracle import OracleLimitError, annotate_answers, answer_query, answer_views
from .sampling import (
    CROSS_VIEW,
    DEFAULT_POLICY,
    SamplingError,
    holdout_split,
    instantiate_pinned,
    instantiate_template,
    sample_negatives,
    sample_training_set,
)
from .encoding import InitialEncodings, SetAggregator, combine, pos_enc
from .encoder import (
    AttentionEncoder,
    attention_update,
    masked_attention,
    masked_attention_sparse,
    neighbor_lists,
)
from .decoder import (
    DualDecoder,
    QueryBatch,
    RelationState,
    ViewState,
    group_queries,
)
from .model import (
    ABLATIONS,
    ModelConfig,
    QueryModel,
    load_checkpoint,
    save_checkpoint,
)
from .evaluation import MetricsReport, evaluate, filtered_ranks, hit_at_k, mrr
from .training import (
    TrainingConfig,
    TrainResult,
    loss_from_sims,
    parse_config_file,
    sample_loss,
    train,
    unobserved_view_protocol,
)
from . import fixtures

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
