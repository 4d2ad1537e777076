"""Image/text encoder backends.

``TinyEncoder`` is a deterministic, dependency-light stand-in used for tests
and offline smoke runs: images embed as coarse color/layout statistics, and
texts embed by rendering the color word found in the prompt (or a
hash-derived fallback color) to a swatch pushed through the same image
pathway, so image and text vectors share one space.

``HFClipEncoder`` wraps a locally available CLIP checkpoint through
``transformers`` when real features are wanted.
"""

from __future__ import annotations

import hashlib

import numpy as np
from PIL import Image

GRID = 4  # images are summarized on a GRID x GRID cell layout

_COLOR_WORDS = {
    "red": (220, 40, 40),
    "green": (40, 200, 60),
    "blue": (50, 70, 220),
    "yellow": (230, 220, 50),
    "cyan": (60, 210, 210),
    "magenta": (210, 60, 200),
    "orange": (235, 140, 40),
    "purple": (130, 60, 180),
    "white": (245, 245, 245),
    "black": (15, 15, 15),
    "gray": (128, 128, 128),
    "grey": (128, 128, 128),
    "brown": (130, 85, 45),
    "pink": (240, 150, 180),
}


class TinyEncoder:
    """Deterministic toy encoder over a 64-dim shared space."""

    name = "tiny-color-layout"
    temperature = 0.1
    dim = GRID * GRID * 3 + GRID * GRID

    def encode_image(self, image: Image.Image) -> np.ndarray:
        rgb = np.asarray(
            image.convert("RGB").resize((GRID * 8, GRID * 8), Image.BILINEAR),
            dtype=np.float64,
        ) / 255.0
        cells = rgb.reshape(GRID, 8, GRID, 8, 3).mean(axis=(1, 3))
        gray = rgb.mean(axis=2).reshape(GRID, 8, GRID, 8).mean(axis=(1, 3))
        return np.concatenate([cells.ravel(), gray.ravel()])

    def encode_images(self, images) -> np.ndarray:
        return np.stack([self.encode_image(im) for im in images])

    def _prompt_color(self, prompt: str) -> tuple[int, int, int]:
        for token in prompt.lower().replace(".", " ").replace("_", " ").split():
            if token in _COLOR_WORDS:
                return _COLOR_WORDS[token]
        digest = hashlib.sha256(prompt.encode("utf-8")).digest()
        return digest[0], digest[1], digest[2]

    def encode_texts(self, prompts) -> np.ndarray:
        swatches = [
            Image.new("RGB", (GRID * 8, GRID * 8), self._prompt_color(p))
            for p in prompts
        ]
        return self.encode_images(swatches)


class HFClipEncoder:
    """Real CLIP features via transformers; needs a local checkpoint."""

    def __init__(self, model_id: str):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:  # pragma: no cover - optional extra
            raise RuntimeError(
                "the hf backend needs the transformers and torch packages"
            ) from exc
        self._torch = torch
        self.name = model_id
        self.model = CLIPModel.from_pretrained(model_id)
        self.model.eval()
        self.processor = CLIPProcessor.from_pretrained(model_id)
        self.temperature = float(1.0 / self.model.logit_scale.exp().item())
        self.dim = self.model.config.projection_dim

    def encode_images(self, images) -> np.ndarray:
        with self._torch.no_grad():
            inputs = self.processor(images=list(images), return_tensors="pt")
            feats = self.model.get_image_features(**inputs)
        return feats.double().cpu().numpy()

    def encode_texts(self, prompts) -> np.ndarray:
        with self._torch.no_grad():
            inputs = self.processor(
                text=list(prompts), return_tensors="pt", padding=True
            )
            feats = self.model.get_text_features(**inputs)
        return feats.double().cpu().numpy()


def make_encoder(backend: str, model_id: str | None = None):
    if backend == "tiny":
        return TinyEncoder()
    if backend == "hf":
        if not model_id:
            raise ValueError("the hf backend needs --model (id or local path)")
        return HFClipEncoder(model_id)
    raise ValueError(f"unknown backend {backend!r}")
