from .exporter import (DEFAULT_MODEL, ChannelSummary, ExportError, ExportJob,
                       ExportSummary, export_embeddings, read_text_sidecar)
from .writer import ChannelEmbedding, write_embedding_file

__version__ = "0.1.0"
