"""Weakly supervised speaker-embedding training with multi-instance aggregation.

Recordings carry a single target-speaker label and nothing else.  The pipeline
diarizes them without any pretrained model, trains an embedding network whose
recording-level logits aggregate per-cluster similarities, self-labels chunks
with that network and finally retrains a supervised extractor on the selected
chunks.
"""

__version__ = "0.1.0"
