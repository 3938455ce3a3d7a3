"""misslab: synthetic-panel missing-data laboratory.

Generate realistic mixed-type panel data, inject MCAR/MAR missingness,
impute with five multiple-imputation engines built on from-scratch trees,
and evaluate bias, test decisions, and imputation accuracy in Monte Carlo
studies.
"""

__version__ = "0.1.0"

from . import tabular, trees  # noqa: F401
