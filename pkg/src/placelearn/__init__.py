"""placelearn: learning where objects can be placed in point-cloud scenes.

Pipeline: synthesize object/environment clouds, sample candidate poses,
label them with a rigid-body settling oracle plus preference rules,
describe each candidate with a 120-dimensional geometric feature vector,
train max-margin rankers (independent, pooled, or shared-sparsity
multi-task), and benchmark the resulting placement rankings.
"""

from ._kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
