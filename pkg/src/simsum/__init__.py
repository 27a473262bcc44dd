"""simsum: unsupervised extractive summarization toolkit.

Trains a small sentence encoder with contrastive and mutual-learning
objectives, ranks sentences by graph degree centrality, extracts top-k
summaries, and evaluates them with a built-in ROUGE implementation.
"""

from .corpus import Document, Sentence, Vocabulary, load_dataset, save_dataset, tokenize
from .diffmath import Tensor
from .rouge import RougeReport, RougeScore, evaluate_corpus, rouge_l, rouge_n
from .trainer import TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "Document", "Sentence", "Vocabulary", "load_dataset", "save_dataset", "tokenize",
    "Tensor", "RougeReport", "RougeScore", "evaluate_corpus", "rouge_l", "rouge_n",
    "TrainConfig", "load_checkpoint", "save_checkpoint", "train", "__version__",
]
