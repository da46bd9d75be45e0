"""Group-level emotion analysis with multi-layered tweet networks and graph neural networks."""

from .labels import EMOTIONS, Emotion, Sentiment, sentiment_collapse
from .preprocess import CleanTweet, RawTweet, clean, filter_by_sentiment, split_hashtag
from .mln import LayerGraph, TweetMln, build_layer1, build_layer2, build_layer3, build_mln
from .embedding import EmbeddingTable, featurize, load_table, lookup
from .layers import ConvKind, ModelDims, ModelParams, cross_entropy, forward
from .training import TrainConfig, split, make_batches, adam_step, train
from .evaluation import metrics, predict, pair_baseline, ablation

__version__ = "0.1.0"
