import os
import json
import hashlib
import logging
from pathlib import Path

import numpy as np
from PIL import Image

logger = logging.getLogger(__name__)

IMAGE_EXTENSIONS = {'.jpg', '.jpeg', '.png', '.bmp', '.tiff', '.webp'}


def save_metadata(output_folder, entry, filename="crops.jsonl"):
    """Append one metadata entry to a JSONL file in the output folder."""
    meta_path = os.path.join(output_folder, filename)
    try:
        with open(meta_path, "a", encoding="utf-8") as f:
            f.write(json.dumps(entry, ensure_ascii=False, sort_keys=True) + "\n")
    except OSError as e:
        raise OSError(f"Failed to save metadata to {meta_path}: {e}") from e


def load_jsonl(path):
    """Read a JSONL file; malformed lines are logged and skipped."""
    entries = []
    with open(path, 'r', encoding='utf-8') as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                entries.append(json.loads(line))
            except json.JSONDecodeError:
                logger.warning(f"{path}:{lineno}: skipping malformed JSON line")
    return entries


def load_json(path):
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)


def write_json(path, data):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(data, f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")


def canonical_hash(data):
    """SHA-256 of the canonical JSON form (sorted keys, no whitespace)."""
    blob = json.dumps(data, sort_keys=True, separators=(',', ':'), ensure_ascii=False)
    return hashlib.sha256(blob.encode('utf-8')).hexdigest()


def list_images(folder):
    """Image files of a directory in sorted order, so listing order never matters."""
    folder = Path(folder)
    if not folder.is_dir():
        return []
    return sorted(p for p in folder.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS)


# ================= Raster I/O =================

def read_image(path):
    """Load an image as an (H, W, 3) uint8 RGB array."""
    try:
        with Image.open(path) as img:
            return np.array(img.convert('RGB'))
    except (OSError, ValueError) as e:
        raise OSError(f"Unreadable image {path}: {e}") from e


def write_image(path, image):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        Image.fromarray(np.ascontiguousarray(image, dtype=np.uint8)).save(path, format='PNG')
    except OSError as e:
        raise OSError(f"Failed to write image {path}: {e}") from e


def read_mask(path):
    """Single-channel PNG; any nonzero value is foreground."""
    try:
        with Image.open(path) as img:
            return np.array(img.convert('L')) > 0
    except (OSError, ValueError) as e:
        raise OSError(f"Unreadable mask {path}: {e}") from e


def write_mask(path, mask):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        Image.fromarray(mask.astype(np.uint8) * 255).save(path, format='PNG')
    except OSError as e:
        raise OSError(f"Failed to write mask {path}: {e}") from e
