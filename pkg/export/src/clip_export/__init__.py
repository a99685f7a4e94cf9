"""Export vision-language embeddings into the LDEB/CSV/manifest formats
consumed by the subpop robustness toolkit."""

from .datasets import Instance, enumerate_instances
from .encoders import StubEncoder, build_encoder
from .export import ExportJob, export_images, export_prompts
from .ldeb import read_embeddings, rows_unit_norm, write_embeddings, write_metadata
from .templates import expand, expand_groups

__version__ = "0.1.0"

__all__ = [
    "ExportJob",
    "Instance",
    "StubEncoder",
    "build_encoder",
    "enumerate_instances",
    "expand",
    "expand_groups",
    "export_images",
    "export_prompts",
    "read_embeddings",
    "rows_unit_norm",
    "write_embeddings",
    "write_metadata",
]
