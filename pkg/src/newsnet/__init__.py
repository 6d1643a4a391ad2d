"""newsnet: multi-task text CNN, CCA retrieval and LSTM captioning toolkit.

Everything runs on plain numpy arrays in double precision with hand-written
backward passes; training and corpus synthesis are deterministic given a
seed.  See the README for the command line walkthrough.
"""

from .baselines import GeoSvr, LinearSvm, LinearSvr
from .captioning import CaptionVocab, LstmCaptioner, build_caption_vocab, context_vector
from .cca import LinearCca
from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import (ArticleRecord, CorpusSplit, SynthSpec, assemble_image_feature,
                     load_corpus, save_corpus, split_corpus, synth_corpus)
from .errors import (ConfigError, CorpusWarning, DataError, NewsnetError,
                     NumericalError)
from .losses import (EARTH_RADIUS_KM, cca_loss, euclidean_loss, gcd_km, gcd_loss,
                     l1_loss, softmax_xent)
from .metrics import (RetrievalResult, accuracy_report, bleu, geo_report,
                      l1_report, retrieval_eval)
from .models import MultitaskTextCnn, SharedTextCnn, TaskHead, TextCnn, param_count
from .nn import SgdConfig, grad_check, lr_at, sgd_step
from .text import (EmbeddingTable, Vocabulary, article_matrix, bow_tfidf,
                   build_vocab, embed_max, embed_mean, load_embeddings,
                   random_embeddings, save_embeddings, truncate_vocab)

__version__ = "0.1.0"

__all__ = [
    "ArticleRecord", "CaptionVocab", "ConfigError", "CorpusSplit",
    "CorpusWarning", "DataError", "EARTH_RADIUS_KM", "EmbeddingTable",
    "GeoSvr", "LinearCca", "LinearSvm", "LinearSvr", "LstmCaptioner",
    "MultitaskTextCnn", "NewsnetError", "NumericalError", "RetrievalResult",
    "SgdConfig", "SharedTextCnn", "SynthSpec", "TaskHead", "TextCnn",
    "Vocabulary", "accuracy_report", "article_matrix",
    "assemble_image_feature", "bleu", "bow_tfidf", "build_caption_vocab",
    "build_vocab", "cca_loss", "context_vector", "embed_max", "embed_mean",
    "euclidean_loss", "gcd_km", "gcd_loss", "geo_report", "grad_check",
    "l1_loss", "l1_report", "load_checkpoint", "load_corpus",
    "load_embeddings", "lr_at", "param_count", "random_embeddings",
    "retrieval_eval", "save_checkpoint", "save_corpus", "save_embeddings",
    "sgd_step", "softmax_xent", "split_corpus", "synth_corpus", "truncate_vocab",
]
