"""PNG I/O and synthetic content images.

Images are ``(H, W, 3)`` torch tensors with values in ``[0, 1]``.
"""
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import InvalidInputError
from .seeding import derive_seed, rng_for

MIN_SIDE = 32


def check_image(img, min_side=MIN_SIDE):
    if img.ndim != 3 or img.shape[-1] != 3:
        raise InvalidInputError(f"expected an (H, W, 3) image, got shape {tuple(img.shape)}")
    h, w = img.shape[:2]
    if h < min_side or w < min_side:
        raise InvalidInputError(f"image is {h}x{w}; both sides must be at least {min_side}")
    if not torch.isfinite(img).all():
        raise InvalidInputError("image contains non-finite values")
    if img.min() < 0 or img.max() > 1:
        raise InvalidInputError("image values must lie in [0, 1]")
    return img


def to_uint8(img):
    """Quantize to 8 bits, rounding half up."""
    arr = img.detach().cpu().double().numpy()
    return np.clip(np.floor(arr * 255.0 + 0.5), 0, 255).astype(np.uint8)


def load_image(path, dtype=torch.float32):
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return torch.from_numpy(arr).to(dtype)


def save_image(img, path):
    Image.fromarray(to_uint8(img), mode="RGB").save(path, format="PNG")


def load_image_dir(directory, dtype=torch.float32):
    paths = sorted(Path(directory).glob("*.png"))
    if not paths:
        raise InvalidInputError(f"no PNG files in {directory}")
    return [load_image(p, dtype=dtype) for p in paths]


def synthetic_content(seed, height=64, width=64, dtype=torch.float64):
    """A smooth random scene: two color gradients plus a few soft blobs."""
    rng = rng_for("content", seed)
    v, u = np.meshgrid(np.linspace(0, 1, height), np.linspace(0, 1, width), indexing="ij")
    c0, c1, c2 = rng.uniform(0.15, 0.85, size=(3, 3))
    img = c0 * (1 - u)[..., None] + c1 * u[..., None]
    img = 0.5 * img + 0.5 * (c2 * v[..., None] + (1 - c2) * (1 - v)[..., None])
    for _ in range(3):
        cy, cx = rng.uniform(0.1, 0.9, size=2)
        r = rng.uniform(0.08, 0.25)
        color = rng.uniform(0, 1, size=3)
        mask = np.exp(-((u - cx) ** 2 + (v - cy) ** 2) / (2 * r * r))[..., None]
        img = img * (1 - 0.7 * mask) + 0.7 * mask * color
    return torch.from_numpy(np.clip(img, 0.0, 1.0)).to(dtype)


def demo_content_pool(seed=0, n=3, size=48, dtype=torch.float32):
    """Seeded synthetic content images for toy runs and tests."""
    return [synthetic_content(derive_seed("pool", seed, k), size, size).to(dtype) for k in range(n)]
