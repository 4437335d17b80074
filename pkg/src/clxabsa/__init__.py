"""Cross-lingual aspect sentiment tagging with contrastive training and multi-teacher distillation."""

__version__ = "0.1.0"

from .analysis import EvalReport, calinski_harabasz, calinski_harabasz_score, micro_f1, pca_2d, pca_project
from .corpus import AnnotatedSentence, Dataset, DatasetRole, Direction, ParallelPair, build_code_switched
from .distillation import TeacherEnsemble, distill_loss, fuse_teachers, run_distillation
from .estimators import PCA2D, ABSATagger, DistilledTagger
from .model import Tagger, build_toy_tagger, load_checkpoint, save_checkpoint
from .objectives import ContrastiveConfig, Level, combined_loss, contrastive_loss, cross_entropy
from .tagging import TAGS, LabelTag, SpanAnnotation, decode_tags, encode_spans
from .trainer import RunLog, TrainConfig, train

__all__ = [
    "ABSATagger", "AnnotatedSentence", "ContrastiveConfig", "Dataset", "DatasetRole", "Direction",
    "DistilledTagger", "EvalReport", "LabelTag", "Level", "PCA2D", "ParallelPair", "RunLog", "SpanAnnotation",
    "TAGS", "Tagger", "TeacherEnsemble", "TrainConfig", "build_code_switched", "build_toy_tagger",
    "calinski_harabasz", "calinski_harabasz_score", "combined_loss", "contrastive_loss", "cross_entropy",
    "decode_tags", "distill_loss", "encode_spans", "fuse_teachers", "load_checkpoint", "micro_f1", "pca_2d",
    "pca_project", "run_distillation", "save_checkpoint", "train",
]
