"""Walk an image folder, embed images and class prompts, write UMFS files.

The prompt for class c in domain D is the fixed template
``a D photo of a c.`` with underscores in names shown as spaces. When the
folder contains one subdirectory per class, the vision file carries labels;
a flat folder exports unlabeled.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .umfs import write_umfs

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".webp"}


@dataclass
class ExportManifest:
    model: str
    domain: str
    class_names: list[str]
    image_count: int
    skipped: int
    temperature: float
    vision_path: str
    text_path: str
    labeled: bool
    paths: dict = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [
            f"model={self.model}",
            f"domain={self.domain}",
            f"classes={','.join(self.class_names)}",
            f"image_count={self.image_count}",
            f"skipped={self.skipped}",
            f"temperature={self.temperature!r}",
            f"vision_path={self.vision_path}",
            f"text_path={self.text_path}",
            f"labeled={int(self.labeled)}",
        ]
        return "\n".join(lines) + "\n"


def build_prompt(domain: str, class_name: str) -> str:
    return f"a {domain} photo of a {class_name}."


def _pretty(name: str) -> str:
    return name.replace("_", " ")


def _image_files(folder: Path):
    return sorted(
        p for p in folder.iterdir()
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    )


def _load_images(paths):
    images, kept, skipped = [], [], 0
    for p in paths:
        try:
            with Image.open(p) as im:
                images.append(im.convert("RGB"))
            kept.append(p)
        except (UnidentifiedImageError, OSError):
            warnings.warn(f"skipping unreadable image {p}")
            skipped += 1
    return images, kept, skipped


def export(image_dir, class_names, domain_descriptor: str, out_prefix: str,
           encoder, target: bool = False) -> ExportManifest:
    """Embed a folder and write <prefix>.vis.umfs / <prefix>.txt.umfs plus a
    manifest. Class-named subfolders produce a labeled vision file."""
    image_dir = Path(image_dir)
    class_names = list(class_names)
    if len(class_names) < 2:
        raise ValueError("need at least two class names")

    folders = {p.name for p in image_dir.iterdir() if p.is_dir()}
    labeled = all(name in folders for name in class_names)

    images, labels, skipped = [], [], 0
    if labeled:
        for idx, name in enumerate(class_names):
            batch, _, bad = _load_images(_image_files(image_dir / name))
            if not batch:
                raise ValueError(f"class {name!r} has no readable images")
            images.extend(batch)
            labels.extend([idx] * len(batch))
            skipped += bad
        labels = np.asarray(labels, dtype=np.int32)
    else:
        images, _, skipped = _load_images(_image_files(image_dir))
        labels = None
        if not images:
            raise ValueError(f"no readable images under {image_dir}")

    vision = encoder.encode_images(images)
    prompts = [build_prompt(domain_descriptor, _pretty(n)) for n in class_names]
    text = encoder.encode_texts(prompts)

    vis_path = f"{out_prefix}.vis.umfs"
    txt_path = f"{out_prefix}.txt.umfs"
    manifest_path = f"{out_prefix}.manifest.txt"
    write_umfs(vis_path, vision, len(class_names), labels=labels, target=target)
    write_umfs(txt_path, text, len(class_names))

    manifest = ExportManifest(
        model=encoder.name,
        domain=domain_descriptor,
        class_names=class_names,
        image_count=len(images),
        skipped=skipped,
        temperature=encoder.temperature,
        vision_path=vis_path,
        text_path=txt_path,
        labeled=labels is not None,
    )
    with open(manifest_path, "w", encoding="utf-8") as fh:
        fh.write(manifest.to_text())
    manifest.paths = {"vision": vis_path, "text": txt_path, "manifest": manifest_path}
    return manifest
