"""seqmix: cross-domain action-sequence mixing on a synthetic two-domain corpus.

Pipeline stages: corpus generation, source-only pretraining, pseudo-labeling,
mixed-sequence training with adversarial domain alignment, masked label-model
rescoring and co-occurrence pruning. See the CLI (`seqmix --help`) for the
stage commands and README.md for the file formats.
"""

__version__ = "0.1.0"
