"""Random square crops and random perspective warps for the patch loss.

Both operations draw from per-patch RNG substreams keyed on ``(seed, index)``
so patch ``i`` sees the same crop and warp regardless of how many patches are
requested or in what order they are processed. The warp is a fixed bilinear
resampling once the seed is fixed, so gradients pass through it.
"""
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .errors import InvalidConfigError, NumericError
from .seeding import rng_for

DEFAULT_DISTORTION = 0.5
MAX_WARP_RETRIES = 10


@dataclass
class PatchSet:
    patches: torch.Tensor  # (n, size, size, 3)
    coords: list = field(default_factory=list)  # (top, left) per patch
    seed: int = 0

    def __len__(self):
        return self.patches.shape[0]


def crop_coords(height, width, n, size, seed):
    if size < 1 or size > min(height, width):
        raise InvalidConfigError(f"patch size {size} does not fit a {height}x{width} image")
    coords = []
    for i in range(n):
        rng = rng_for("crop", seed, i)
        coords.append((int(rng.integers(0, height - size + 1)), int(rng.integers(0, width - size + 1))))
    return coords


def random_crops(img, n, size, seed):
    h, w = img.shape[-3:-1]
    coords = crop_coords(h, w, n, size, seed)
    if n == 0:
        return PatchSet(img.new_zeros((0, size, size, 3)), coords, seed)
    patches = torch.stack([img[t:t + size, l:l + size, :] for t, l in coords])
    return PatchSet(patches, coords, seed)


def _homography_systems(src, dst):
    """Batched 8x8 systems for ``(..., 4, 2)`` point sets."""
    x, y = src[..., 0], src[..., 1]
    xp, yp = dst[..., 0], dst[..., 1]
    one, zero = np.ones_like(x), np.zeros_like(x)
    rows_x = np.stack([x, y, one, zero, zero, zero, -x * xp, -y * xp], axis=-1)
    rows_y = np.stack([zero, zero, zero, x, y, one, -x * yp, -y * yp], axis=-1)
    a = np.stack([rows_x, rows_y], axis=-2).reshape(src.shape[:-2] + (8, 8))
    b = np.stack([xp, yp], axis=-1).reshape(src.shape[:-2] + (8,))
    return a, b


def solve_homography(src, dst):
    """3x3 projective map ``H`` with ``H @ [x, y, 1] ~ [x', y', 1]`` for four point pairs."""
    a, b = _homography_systems(np.asarray(src, dtype=np.float64), np.asarray(dst, dtype=np.float64))
    if abs(np.linalg.det(a)) < 1e-12:
        raise np.linalg.LinAlgError("degenerate corner configuration")
    return np.append(np.linalg.solve(a, b), 1.0).reshape(3, 3)


def _convex(quads):
    """True per quad (``(..., 4, 2)``) when all turns have the same strict sign."""
    p0, p1, p2 = quads, np.roll(quads, -1, axis=-2), np.roll(quads, -2, axis=-2)
    cross = ((p1[..., 0] - p0[..., 0]) * (p2[..., 1] - p1[..., 1])
             - (p1[..., 1] - p0[..., 1]) * (p2[..., 0] - p1[..., 0]))
    return np.all(cross > 1e-9, axis=-1) | np.all(cross < -1e-9, axis=-1)


def _corners(size):
    s = size - 1
    return np.array([[0, 0], [s, 0], [s, s], [0, s]], dtype=np.float64)


def perspective_corners(size, distortion, rng):
    """Move every corner inward by up to ``distortion * size / 2`` along each axis."""
    reach = distortion * size / 2.0
    inward = np.array([[1, 1], [-1, 1], [-1, -1], [1, -1]], dtype=np.float64)
    return _corners(size) + inward * rng.uniform(0.0, reach, size=(4, 2))


def warp_grids(size, distortion, rngs, dtype=torch.float64):
    """Sampling grids ``(n, size, size, 2)`` in normalized coordinates, one warp per RNG."""
    n = len(rngs)
    src = np.broadcast_to(_corners(size), (n, 4, 2))
    dst = np.stack([perspective_corners(size, distortion, rng) for rng in rngs])
    for _ in range(MAX_WARP_RETRIES):
        a, _ = _homography_systems(dst, src)
        bad = ~_convex(dst) | (np.abs(np.linalg.det(a)) < 1e-12)
        if not bad.any():
            break
        for i in np.flatnonzero(bad):
            dst[i] = perspective_corners(size, distortion, rngs[i])
    else:
        raise NumericError(f"no invertible perspective found after {MAX_WARP_RETRIES} draws")
    a, b = _homography_systems(dst, src)  # output pixel -> input pixel
    h = np.concatenate([np.linalg.solve(a, b[..., None])[..., 0], np.ones((n, 1))], axis=-1).reshape(n, 3, 3)
    ys, xs = np.meshgrid(np.arange(size, dtype=np.float64), np.arange(size, dtype=np.float64), indexing="ij")
    pts = np.stack([xs, ys, np.ones_like(xs)], axis=-1).reshape(-1, 3)
    mapped = (pts @ h.transpose(0, 2, 1)).reshape(n, size, size, 3)
    grid = 2.0 * mapped[..., :2] / mapped[..., 2:3] / max(size - 1, 1) - 1.0
    return torch.from_numpy(grid).to(dtype)


def _warp(patches, grids):
    x = patches.permute(0, 3, 1, 2)
    out = F.grid_sample(x, grids.to(x.dtype), mode="bilinear", padding_mode="zeros", align_corners=True)
    return out.permute(0, 2, 3, 1)


def random_perspective(patch, distortion, seed, index=0):
    """Warp one ``(size, size, 3)`` patch; ``distortion == 0`` returns it untouched."""
    if not 0.0 <= distortion <= 1.0:
        raise InvalidConfigError("distortion must lie in [0, 1]")
    if distortion == 0.0:
        return patch
    grid = warp_grids(patch.shape[0], distortion, [rng_for("perspective", seed, index)])
    return _warp(patch[None], grid)[0]


def augment_patches(patches, distortion, seed):
    """Apply an independent random perspective to each patch of an ``(n, s, s, 3)`` stack."""
    if not 0.0 <= distortion <= 1.0:
        raise InvalidConfigError("distortion must lie in [0, 1]")
    if distortion == 0.0 or patches.shape[0] == 0:
        return patches
    rngs = [rng_for("perspective", seed, i) for i in range(patches.shape[0])]
    return _warp(patches, warp_grids(patches.shape[1], distortion, rngs))
