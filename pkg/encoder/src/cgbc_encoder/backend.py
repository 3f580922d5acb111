"""CLIP-family model wrapper that emits unit-norm float32 rows.

The backend is a thin adapter: load a checkpoint once, then encode batches
of texts or image files. It runs the model in eval mode under
``torch.inference_mode``, so encoding is a pure function of the inputs and
repeated calls return identical rows.
"""

from __future__ import annotations

import numpy as np
import torch
from PIL import Image
from transformers import CLIPModel, CLIPProcessor


class EncodeError(Exception):
    """A model could not be loaded or an input could not be encoded."""


def _batches(items, size):
    for i in range(0, len(items), size):
        yield items[i : i + size]


def _unit_rows(feats: torch.Tensor) -> np.ndarray:
    rows = feats.detach().cpu().to(torch.float64).numpy()
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise EncodeError("model produced a zero embedding vector")
    return (rows / norms).astype(np.float32)


def _features(output) -> torch.Tensor:
    # newer transformers return an output object, older ones a bare tensor
    return getattr(output, "pooler_output", output)


class ClipBackend:
    """Encodes texts and images with one loaded CLIP-family checkpoint."""

    def __init__(self, model_id: str, device: str = "cpu"):
        try:
            self.model = CLIPModel.from_pretrained(model_id).eval().to(device)
            self.processor = CLIPProcessor.from_pretrained(model_id)
        except Exception as exc:
            raise EncodeError(f"cannot load model '{model_id}': {exc}") from exc
        self.model_id = str(model_id)
        self.device = device

    @property
    def dim(self) -> int:
        return int(self.model.config.projection_dim)

    def _check_batch(self, items, batch, kind):
        if not items:
            raise EncodeError(f"no {kind} to encode")
        if batch < 1:
            raise EncodeError(f"batch must be >= 1, got {batch}")

    def encode_texts(self, texts, batch: int = 32) -> np.ndarray:
        """Unit-norm float32 rows, one per text, in input order."""
        texts = [str(t) for t in texts]
        self._check_batch(texts, batch, "texts")
        max_len = int(self.model.config.text_config.max_position_embeddings)
        chunks = []
        with torch.inference_mode():
            for group in _batches(texts, batch):
                enc = self.processor(
                    text=group,
                    padding=True,
                    truncation=True,
                    max_length=max_len,
                    return_tensors="pt",
                ).to(self.device)
                out = self.model.get_text_features(
                    input_ids=enc["input_ids"],
                    attention_mask=enc["attention_mask"],
                )
                chunks.append(_features(out))
        return _unit_rows(torch.cat(chunks))

    def encode_images(self, paths, batch: int = 32) -> np.ndarray:
        """Unit-norm float32 rows, one per image file, in input order."""
        paths = [str(p) for p in paths]
        self._check_batch(paths, batch, "images")
        chunks = []
        with torch.inference_mode():
            for group in _batches(paths, batch):
                images = [self._load_image(p) for p in group]
                enc = self.processor(images=images, return_tensors="pt").to(self.device)
                out = self.model.get_image_features(pixel_values=enc["pixel_values"])
                chunks.append(_features(out))
        return _unit_rows(torch.cat(chunks))

    @staticmethod
    def _load_image(path: str) -> Image.Image:
        try:
            with Image.open(path) as img:
                return img.convert("RGB")
        except OSError as exc:
            raise EncodeError(f"unreadable image: {path}: {exc}") from exc

    def __call__(self, texts) -> np.ndarray:
        # matches the embed-callable shape the concept dedup step accepts
        return self.encode_texts(list(texts))
