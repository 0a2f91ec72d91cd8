"""Unsupervised speech pattern discovery with multi-layered acoustic tokenizers.

Subpackages and modules
-----------------------
corpusio   feature, label, manifest and model file formats
frontend   MFCC extraction, normalization and frame stacking
hmmtok     one layer of left-to-right token HMMs trained by Viterbi re-estimation
matlayers  the (m, n) grid of layers and the tokenizer/network feedback loop
reinforce  boundary fusion and LDA relabeling across layers
mdnn       multi-target bottleneck network
match      token distances, DTW and query-by-example search
evalkit    ABX, NED, coverage, boundary/token/type scores, MAP
cli        config-driven pipeline and synthetic corpora
"""

from .corpusio import FeatureSequence
from .hmmtok import AcousticTokenizer, TokenSet
from .matlayers import GranularityGrid, MultiLayerTokenizer
from .mdnn import MultiTargetNet
from .reinforce import LdaGibbs

__version__ = "0.1.0"

__all__ = ["FeatureSequence", "AcousticTokenizer", "TokenSet", "GranularityGrid",
           "MultiLayerTokenizer", "MultiTargetNet", "LdaGibbs"]
