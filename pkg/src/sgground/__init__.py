"""Scene-graph grounding on synthetic scenes.

Given a scene-graph query and a set of region proposals, build a
query-guided proposal graph, run visio-lingual message passing, and score
proposals against query entities to localize each one.  Training, metrics
and the analysis harnesses run on a synthetic spatial-relation benchmark.
"""

from .autodiff import MLP, GradCheckReport, Tape, grad_check
from .boxes import Box, iou, union_box
from .dataset import GroundingDataset, make_dataset, read_dataset, write_dataset
from .evaluation import (
    Localization,
    ablation_orders,
    evaluate,
    infer,
    recall_at_k,
    robustness_sweep,
    timing_benchmark,
    zero_shot_eval,
)
from .graphs import (
    ProposalGraph,
    VisioLingualGraph,
    build_proposal_graph,
    build_visio_lingual_graph,
    geometric_features,
    rel_sim,
)
from .mpnet import GraphState, MessagePassingConfig, run_mpag
from .params import ModelDims, ModelParameters, load_checkpoint, save_checkpoint
from .pipeline import compute_loss, run_forward
from .scenegen import (
    DatasetConfig,
    Instance,
    Proposal,
    QueryGraph,
    QueryNode,
    Scene,
    generate_proposals,
    generate_scene,
    perturb_query,
    relation_holds,
    sample_query,
)
from .scoring import (
    LabelAssignment,
    LossBreakdown,
    LossWeights,
    assign_labels,
    balanced_edge_sample,
    edge_loss,
    node_loss,
    total_loss,
)
from .training import TrainConfig, init_model, train
from .vocab import EmbeddingProvider, Vocabulary, load_embeddings

__version__ = "0.1.0"
