"""Convert chest-sensor .pkl sessions into AFB1 containers with manifests."""

from wesad_convert.afb1 import (
    CANONICAL_MODALITIES,
    SAMPLE_RATE_HZ,
    read_container,
    write_container,
)
from wesad_convert.convert import (
    ConversionError,
    ConversionManifest,
    convert,
    default_manifest_path,
    verify,
)

__all__ = [
    "CANONICAL_MODALITIES",
    "SAMPLE_RATE_HZ",
    "ConversionError",
    "ConversionManifest",
    "convert",
    "default_manifest_path",
    "read_container",
    "verify",
    "write_container",
]
