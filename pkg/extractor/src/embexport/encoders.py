"""Encoder registry: model id -> loader producing image/text embedding fns.

Heavyweight runtimes (torch, transformers) import lazily inside the loaders,
so the exporter and its tests work without them installed.  Every encoder
reports its embedding width up front; job validation asserts outputs match.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable

import numpy as np


class EncoderError(Exception):
    pass


@dataclass
class Encoder:
    name: str
    width: int
    encode_images: Callable  # list[PIL.Image] -> (B, width) float array
    encode_texts: Callable | None  # list[str] -> (M, width), None if unimodal


_LOADERS: dict[str, Callable[[str], Encoder]] = {}
_WIDTHS = {
    "clip-vit-l14": 768,
    "clip-vit-b32": 512,
    "dino-vitb16": 768,
    "debug-hash16": 16,
}

_HF_CLIP = {
    "clip-vit-l14": "openai/clip-vit-large-patch14",
    "clip-vit-b32": "openai/clip-vit-base-patch32",
}


def known_models() -> list[str]:
    return sorted(_WIDTHS)


def model_width(name: str) -> int:
    if name not in _WIDTHS:
        raise EncoderError(f"unknown model {name!r}; known: {known_models()}")
    return _WIDTHS[name]


def register(name: str, width: int, loader: Callable[[str], Encoder]) -> None:
    """Expose a custom encoder (used by tests to stub the heavy models)."""
    _WIDTHS[name] = width
    _LOADERS[name] = loader


def load_encoder(name: str, device: str = "cpu") -> Encoder:
    if name in _LOADERS:
        return _LOADERS[name](device)
    if name in _HF_CLIP:
        return _load_clip(name, device)
    if name == "dino-vitb16":
        return _load_dino(device)
    if name == "debug-hash16":
        return _debug_hash_encoder()
    raise EncoderError(f"unknown model {name!r}; known: {known_models()}")


def _load_clip(name: str, device: str) -> Encoder:
    import torch
    from transformers import CLIPModel, CLIPProcessor

    model = CLIPModel.from_pretrained(_HF_CLIP[name]).to(device).eval()
    processor = CLIPProcessor.from_pretrained(_HF_CLIP[name])

    @torch.no_grad()
    def encode_images(images):
        inputs = processor(images=images, return_tensors="pt").to(device)
        feats = model.get_image_features(**inputs)
        return feats.cpu().double().numpy()

    @torch.no_grad()
    def encode_texts(texts):
        inputs = processor(text=texts, return_tensors="pt", padding=True, truncation=True)
        feats = model.get_text_features(**inputs.to(device))
        return feats.cpu().double().numpy()

    return Encoder(name, _WIDTHS[name], encode_images, encode_texts)


def _load_dino(device: str) -> Encoder:
    import torch
    from transformers import AutoImageProcessor, AutoModel

    model = AutoModel.from_pretrained("facebook/dino-vitb16").to(device).eval()
    processor = AutoImageProcessor.from_pretrained("facebook/dino-vitb16")

    @torch.no_grad()
    def encode_images(images):
        inputs = processor(images=images, return_tensors="pt").to(device)
        out = model(**inputs).last_hidden_state[:, 0]  # CLS token
        return out.cpu().double().numpy()

    return Encoder("dino-vitb16", 768, encode_images, None)


def _debug_hash_encoder() -> Encoder:
    """Offline deterministic stand-in: embeds bytes by hashing.

    Useful for exercising the pipeline plumbing where the real weights are
    unavailable; similarity structure is meaningless by design.
    """

    def embed_bytes(payload: bytes) -> np.ndarray:
        digest = hashlib.sha256(payload).digest()
        vals = np.frombuffer(digest[:32], dtype=np.uint16).astype(np.float64)
        return vals - vals.mean()

    def encode_images(images):
        return np.stack([embed_bytes(im.tobytes()) for im in images])

    def encode_texts(texts):
        return np.stack([embed_bytes(t.encode("utf-8")) for t in texts])

    return Encoder("debug-hash16", 16, encode_images, encode_texts)
