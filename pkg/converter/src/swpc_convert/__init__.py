"""Convert public BNCI-Horizon motor-imagery recordings to SWPC containers."""

from swpc_convert.datasets import REGISTRY, DatasetDescriptor
from swpc_convert.convert import (
    ChecksumError,
    ConversionError,
    ExcludedSubjectError,
    FetchError,
    MetadataError,
    convert,
)

__all__ = [
    "REGISTRY",
    "DatasetDescriptor",
    "ChecksumError",
    "ConversionError",
    "ExcludedSubjectError",
    "FetchError",
    "MetadataError",
    "convert",
]
