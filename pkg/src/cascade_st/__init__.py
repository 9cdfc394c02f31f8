"""Desk-scale cascade speech translation workbench.

Transformer ASR and MT models built on a minimal reverse-mode autodiff
engine, a jointly trained cascade that passes pre-softmax decoder states
from ASR into MT, coupled n-best inference, softmax-averaging ensembles,
and a WER/BLEU/segmentation evaluation stack, all driven by a CLI over
synthetic tone-language datasets.
"""

__version__ = "0.1.0"
