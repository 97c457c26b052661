"""Multi-domain learning experiment framework.

Trains width-scalable hard-parameter-sharing classifiers jointly across
image domains, scores per-domain knowledge transfer and interference on a
sample-wise basis, measures task similarity with linear CKA, and runs the
comparison statistics (loss-weighting t-tests, transfer-learning vs joint
-training correlations) over a declarative experiment grid.
"""

__version__ = "0.1.0"
