"""Semi-supervised document-level relation extraction at desk scale."""

from .corpus import Document, Mention, RelationSchema, load_corpus, load_schema, save_corpus
from .evaluation import EvalReport, evaluate
from .losses import LossConfig, afl_loss, atl_loss, decide
from .model import DocREModel, ModelConfig
from .training import RelationExtractor, StageConfig, train_stage

__version__ = "0.1.0"
