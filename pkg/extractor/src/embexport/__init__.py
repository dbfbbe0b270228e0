"""Embedding exporter: pre-trained encoders in, EMB1 tensor files out."""

from .emb1 import Emb1Error, read_emb1, write_emb1
from .encoders import Encoder, EncoderError, known_models, load_encoder, model_width, register
from .jobs import ExtractJob, JobError, extract_images, extract_texts

__version__ = "0.1.0"

__all__ = [
    "Emb1Error",
    "Encoder",
    "EncoderError",
    "ExtractJob",
    "JobError",
    "extract_images",
    "extract_texts",
    "known_models",
    "load_encoder",
    "model_width",
    "read_emb1",
    "register",
    "write_emb1",
]
