"""CLIP-space losses: global, directional, thresholded patch, and the weighted total."""
import math
from dataclasses import dataclass, replace

import torch

from .augmentation import DEFAULT_DISTORTION, augment_patches, random_crops
from .distribution import mahalanobis
from .errors import DegenerateDirectionError, InvalidConfigError, InvalidInputError, NumericError

SOURCE_TEXT = "A photo"
DEGENERATE_NORM = 1e-12


@dataclass(frozen=True)
class LossWeights:
    lambda_dir: float = 5e2
    lambda_patch: float = 9e3
    lambda_dis: float = 1.0

    def __post_init__(self):
        for name in ("lambda_dir", "lambda_patch", "lambda_dis"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise InvalidConfigError(f"{name} must be finite and >= 0, got {value}")


@dataclass(frozen=True)
class PatchConfig:
    n_patches: int = 16
    patch_size: int = 128
    threshold: float = 0.7
    seed: int = 0
    distortion: float = DEFAULT_DISTORTION

    def __post_init__(self):
        if self.n_patches < 1:
            raise InvalidConfigError("n_patches must be positive")
        if self.patch_size < 1:
            raise InvalidConfigError("patch_size must be positive")
        if not self.threshold >= 0:
            raise InvalidConfigError("threshold must be >= 0")
        if not 0.0 <= self.distortion <= 1.0:
            raise InvalidConfigError("distortion must lie in [0, 1]")

    def with_seed(self, seed):
        return replace(self, seed=seed)


def clip_distance(img_emb, txt_emb):
    """``1 - cos(img_emb, txt_emb)``, in ``[0, 2]``."""
    na, nb = img_emb.norm(dim=-1), txt_emb.norm(dim=-1)
    if bool((na == 0).any()) or bool((nb == 0).any()):
        raise InvalidInputError("zero-norm embedding")
    return 1.0 - (img_emb * txt_emb).sum(-1) / (na * nb)


def text_direction(embedder, t_sty, t_src=SOURCE_TEXT, dtype=torch.float32):
    delta = embedder.embed_text(t_sty, dtype=dtype) - embedder.embed_text(t_src, dtype=dtype)
    if float(delta.norm()) < DEGENERATE_NORM:
        raise DegenerateDirectionError(f"{t_sty!r} and {t_src!r} embed to the same point")
    return delta


def directional_cosine(delta_i, delta_t):
    """``1 - cos(delta_i, delta_t)`` over the last axis; 1 where ``delta_i`` vanishes."""
    nt = delta_t.norm(dim=-1)
    if bool((nt < DEGENERATE_NORM).any()):
        raise DegenerateDirectionError("text direction has zero length")
    ni = delta_i.norm(dim=-1)
    cos = (delta_i * delta_t).sum(-1) / (ni.clamp_min(DEGENERATE_NORM) * nt)
    return torch.where(ni < DEGENERATE_NORM, torch.ones_like(cos), 1.0 - cos)


def global_loss(stylized, t_sty, embedder):
    return clip_distance(embedder.embed_image(stylized), embedder.embed_text(t_sty, dtype=stylized.dtype))


def directional_loss(content, stylized, t_sty, t_src, embedder, delta_t=None, content_emb=None):
    if delta_t is None:
        delta_t = text_direction(embedder, t_sty, t_src, dtype=stylized.dtype)
    if content_emb is None:
        content_emb = embedder.embed_image(content.to(stylized.dtype))
    return directional_cosine(embedder.embed_image(stylized) - content_emb, delta_t)


def patch_directional_losses(content, stylized, t_sty, t_src, embedder, cfg, delta_t=None,
                             content_emb=None):
    """Per-patch directional losses ``l^i`` before thresholding, shape ``(N,)``."""
    h, w = stylized.shape[:2]
    if cfg.patch_size > min(h, w):
        raise InvalidConfigError(f"patch size {cfg.patch_size} exceeds the {h}x{w} image")
    if delta_t is None:
        delta_t = text_direction(embedder, t_sty, t_src, dtype=stylized.dtype)
    if content_emb is None:
        content_emb = embedder.embed_image(content.to(stylized.dtype))
    crops = random_crops(stylized, cfg.n_patches, cfg.patch_size, cfg.seed)
    augmented = augment_patches(crops.patches, cfg.distortion, cfg.seed)
    return directional_cosine(embedder.embed_image(augmented) - content_emb, delta_t)


def threshold_reject(losses, tau):
    """Zero every entry below ``tau``."""
    return torch.where(losses < tau, torch.zeros_like(losses), losses)


def patch_loss(content, stylized, t_sty, t_src, embedder, cfg, delta_t=None, content_emb=None):
    per_patch = patch_directional_losses(content, stylized, t_sty, t_src, embedder, cfg,
                                         delta_t=delta_t, content_emb=content_emb)
    return threshold_reject(per_patch, cfg.threshold).mean()


def _as_float(value):
    return float(value.detach()) if isinstance(value, torch.Tensor) else float(value)


def total_loss(parts, weights):
    """``lambda_dir * dir + lambda_patch * patch + lambda_dis * dis``.

    ``parts`` is a mapping with keys ``dir``, ``patch`` and ``dis``.
    """
    for term in ("dir", "patch", "dis"):
        if not math.isfinite(_as_float(parts[term])):
            raise NumericError(f"loss term {term!r} is not finite", term=term)
    return (weights.lambda_dir * parts["dir"] + weights.lambda_patch * parts["patch"]
            + weights.lambda_dis * parts["dis"])


def objective_terms(style, content, t_sty, embedder, stylizer, dist, patch_cfg, t_src=SOURCE_TEXT,
                    delta_t=None, content_emb=None):
    """Evaluate ``dir``, ``patch`` and ``dis`` for one (style vector, content image, prompt).

    ``dist`` may be None, in which case the distribution term is zero.
    """
    stylized = stylizer.apply(content, style)
    if delta_t is None:
        delta_t = text_direction(embedder, t_sty, t_src, dtype=style.dtype)
    if content_emb is None:
        content_emb = embedder.embed_image(content.to(style.dtype))
    terms = {
        "dir": directional_loss(content, stylized, t_sty, t_src, embedder, delta_t, content_emb),
        "patch": patch_loss(content, stylized, t_sty, t_src, embedder, patch_cfg, delta_t, content_emb),
    }
    terms["dis"] = mahalanobis(dist, style) if dist is not None else style.new_zeros(())
    return terms
