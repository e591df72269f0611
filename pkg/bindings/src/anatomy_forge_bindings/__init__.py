"""Array-level access to anatomy-forge for training pipelines."""

from .core import (BindingsError, Dataset, GeneratorHandle, next_pair,
                   open_generator, read_dataset)
from .volume_files import VolumeFormatError, read_volume

__version__ = "0.1.0"

__all__ = [
    "BindingsError",
    "Dataset",
    "GeneratorHandle",
    "VolumeFormatError",
    "next_pair",
    "open_generator",
    "read_dataset",
    "read_volume",
]
