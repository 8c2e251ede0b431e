"""shiftlab: desk-scale experimentation for active learning under domain shift.

Train domain-adversarial classifiers, score unlabeled target data with the
density-ratio-times-entropy criterion, run round-based selection loops
against a simulated oracle, and benchmark selection strategies and
training schemes against each other.
"""

__version__ = "0.1.0"

OUTPUT_ROOT_ENV = "SHIFTLAB_OUT_ROOT"
