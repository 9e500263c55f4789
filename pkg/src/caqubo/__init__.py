"""Feature selection for content-based Item-KNN recommenders as a QUBO problem.

The QUBO diagonal mixes mutual information with the target and
leave-one-feature-out nDCG impact (CAQUBO); solutions come from simulated
annealing, optionally over a partition of the features with repeated-run
voting.
"""

__version__ = "0.1.0"
