"""Active-learning toolkit for character-level word segmentation.

A BiLSTM-CRF segmenter is trained jointly with a self-attention loss
prediction head; the combined normalized-entropy + predicted-loss score
ranks unlabeled sentences for annotation, either by a gold oracle or by
humans through the bundled annotation service.
"""

__version__ = "0.1.0"
