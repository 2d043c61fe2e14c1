"""Multi-modal indoor camera positioning on procedurally generated scenes.

Pipeline: procedural world -> trajectory renders (RGB + point-cloud images)
-> augmentation -> scene classifier, RGB-to-point-cloud translation, and a
fused two-branch pose regressor -> evaluation and single-image localization.
"""

__version__ = "0.1.0"
