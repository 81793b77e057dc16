"""Label-aware visual vocabularies for bag-of-features image representations."""

__version__ = "0.1.0"

from ._backend import USE_NUMBA, backend_name
from .clustering import KMeansParams, KMeansResult, ameliorate_using_kmeans, choose_features_at_random
from .core import ImageFeatures, LabeledDataset, LabelVocabulary, derive_seed, euclidean_distance, nearest
from .encoding import BoFVector, encode_dataset, encode_image
from .filtering import FilterParams, filter_dataset, filter_image
from .vocabulary import (VisualVocabulary, build_dedicated, build_filtered_dedicated, build_random,
                         build_random_km, build_vocabulary, split_sizes)

__all__ = [
    "USE_NUMBA", "backend_name",
    "KMeansParams", "KMeansResult", "ameliorate_using_kmeans", "choose_features_at_random",
    "ImageFeatures", "LabeledDataset", "LabelVocabulary", "derive_seed", "euclidean_distance", "nearest",
    "BoFVector", "encode_dataset", "encode_image",
    "FilterParams", "filter_dataset", "filter_image",
    "VisualVocabulary", "build_dedicated", "build_filtered_dedicated", "build_random",
    "build_random_km", "build_vocabulary", "split_sizes",
]
