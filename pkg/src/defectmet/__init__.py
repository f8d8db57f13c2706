"""Evaluation toolkit for defect instance segmentation in electron micrographs."""

__version__ = "0.1.0"

from .records import CLASSES, Dataset, DefectClass, DefectInstance, ImageRecord

__all__ = ["CLASSES", "Dataset", "DefectClass", "DefectInstance", "ImageRecord", "__version__"]
