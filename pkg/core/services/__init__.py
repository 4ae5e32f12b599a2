"""Services layer"""
from .checkpoint_service import Checkpoint, CheckpointService
from .data_service import DatasetManifest, DatasetService, ImageBuffer

__all__ = ['Checkpoint', 'CheckpointService', 'DatasetManifest', 'DatasetService', 'ImageBuffer']
