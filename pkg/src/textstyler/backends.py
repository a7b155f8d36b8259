"""Joint text-image embedders and style application networks.

Two kinds of backend live here. The toy backends are small, seeded, fully
differentiable stand-ins used for tests and desk-scale runs. The pretrained
adapters wrap external models behind the same two-method surface.

All images are ``(H, W, 3)`` tensors in ``[0, 1]``; batched calls take a
leading batch axis.
"""
import math
import os

import numpy as np
import torch
import torch.nn.functional as F

from .errors import BackendUnavailableError, InvalidInputError
from .seeding import rng_for

TEXT_DIM = 512
STYLE_DIM = 100

# style vector layout for the toy stylizer
GAIN = slice(0, 3)
BIAS = slice(3, 6)
TEX_AMP, TEX_FX, TEX_FY, TEX_PHASE = 6, 7, 8, 9
FIELD = slice(10, STYLE_DIM)


def cosine_basis(height, width, order, dtype=torch.float64):
    """Separable low-frequency cosines sampled at pixel centres, ``(order**2, H, W)``."""
    v = (torch.arange(height, dtype=torch.float64) + 0.5) / height
    u = (torch.arange(width, dtype=torch.float64) + 0.5) / width
    k = torch.arange(order, dtype=torch.float64)
    cv = torch.cos(math.pi * k[:, None] * v[None, :])
    cu = torch.cos(math.pi * k[:, None] * u[None, :])
    basis = cv[:, None, :, None] * cu[None, :, None, :]
    return basis.reshape(order * order, height, width).to(dtype)


def smooth_clamp(x):
    """Sigmoid squashing into (0, 1) with unit slope at 0.5."""
    return torch.sigmoid(4.0 * (x - 0.5))


def _nchw(img):
    return img.permute(0, 3, 1, 2) if img.ndim == 4 else img.permute(2, 0, 1)[None]


class ToyEmbedder:
    """Seeded linear-then-normalize embedder sharing one space for text and images.

    An image is bilinearly resized to ``grid x grid``, flattened and
    projected by a fixed Gaussian matrix. A text token is mapped to a seeded
    random "glyph" image (a flat colour plus a low-frequency field, values in
    [0, 1]) and embedded through the same projection, so images can move
    toward a prompt. Prompt vectors are the normalized sum of their token
    vectors.
    """

    name = "toy-embedder"

    def __init__(self, seed=0, dim=TEXT_DIM, grid=32, glyph_order=4):
        self.seed = seed
        self.dim = dim
        self.grid = grid
        self.glyph_order = glyph_order
        n_in = 3 * grid * grid
        proj = rng_for("embedder-projection", seed, dim, grid).standard_normal((n_in, dim))
        proj /= math.sqrt(n_in)
        self._proj = {torch.float64: torch.from_numpy(proj)}
        self._proj[torch.float32] = self._proj[torch.float64].float()
        self._glyph_basis = cosine_basis(grid, grid, glyph_order)

    @property
    def fingerprint(self):
        return f"{self.name}(seed={self.seed},dim={self.dim},grid={self.grid})"

    def glyph(self, token):
        """The ``grid x grid x 3`` image a token stands for."""
        rng = rng_for("embedder-token", self.seed, token)
        color = rng.uniform(0.0, 1.0, size=3)
        coeffs = rng.normal(0.0, 0.15, size=(3, self.glyph_order**2))
        coeffs[:, 0] = 0.0  # the flat term is carried by ``color``
        field = np.einsum("ck,khw->hwc", coeffs, self._glyph_basis.numpy())
        return torch.from_numpy(np.clip(field + color, 0.0, 1.0))

    def _project(self, flat):
        proj = self._proj.get(flat.dtype)
        if proj is None:
            proj = self._proj[torch.float64].to(flat.dtype)
        return flat @ proj

    def token_vector(self, token):
        vec = self._project(self.glyph(token).reshape(-1))
        return vec / vec.norm()

    def embed_text(self, prompt, dtype=torch.float32):
        tokens = prompt.lower().split()
        if not tokens:
            raise InvalidInputError("prompt is empty")
        total = sum(self.token_vector(t) for t in tokens)
        return (total / total.norm()).to(dtype)

    def embed_image(self, img):
        if img.shape[-1] != 3:
            raise InvalidInputError(f"expected channels-last RGB, got shape {tuple(img.shape)}")
        batched = img.ndim == 4
        small = F.interpolate(_nchw(img), size=(self.grid, self.grid), mode="bilinear",
                              align_corners=False)
        flat = small.permute(0, 2, 3, 1).reshape(small.shape[0], -1)
        emb = F.normalize(self._project(flat), dim=-1, eps=1e-12)
        return emb if batched else emb[0]


class ToyStylizer:
    """Differentiable, seeded stand-in for a style application network.

    The 100-d style vector is read as: per-channel gain offsets (3), per-channel
    biases (3), a sinusoidal texture (amplitude, two frequency offsets, phase)
    and 90 coefficients mixed into a low-frequency colour field. At the zero
    vector the output is ``smooth_clamp(content)``.
    """

    name = "toy-stylizer"

    def __init__(self, seed=0, field_order=4, base_freq=4.0):
        self.seed = seed
        self.field_order = field_order
        self.base_freq = base_freq
        rng = rng_for("stylizer", seed, field_order)
        n_field = FIELD.stop - FIELD.start
        mix = rng.standard_normal((n_field, 3 * field_order**2)) / math.sqrt(n_field)
        self._mix = torch.from_numpy(mix)
        self._tex_color = torch.from_numpy(rng.uniform(0.5, 1.0, size=3))

    @property
    def fingerprint(self):
        return f"{self.name}(seed={self.seed},order={self.field_order},freq={self.base_freq})"

    def apply(self, content, style):
        if style.shape[-1] != STYLE_DIM:
            raise InvalidInputError(f"style vector must have {STYLE_DIM} components")
        batched = style.ndim == 2
        dtype = style.dtype
        if not batched:
            style = style[None]
        if content.ndim == 3:
            content = content[None]
        content = content.to(dtype)
        h, w = content.shape[1:3]
        s = style[:, None, None, :]

        v = ((torch.arange(h, dtype=dtype) + 0.5) / h)[:, None]
        u = ((torch.arange(w, dtype=dtype) + 0.5) / w)[None, :]
        arg = 2 * math.pi * self.base_freq * ((1 + style[:, TEX_FX, None, None]) * u
                                              + (1 + style[:, TEX_FY, None, None]) * v)
        wave = style[:, TEX_AMP, None, None] * torch.sin(arg + math.pi * style[:, TEX_PHASE, None, None])
        texture = wave[..., None] * self._tex_color.to(dtype)

        coeffs = (style[:, FIELD] @ self._mix.to(dtype)).reshape(-1, 3, self.field_order**2)
        basis = cosine_basis(h, w, self.field_order, dtype=dtype)
        field = torch.einsum("bck,khw->bhwc", coeffs, basis)

        out = smooth_clamp((1 + s[..., GAIN]) * content + s[..., BIAS] + texture + field)
        return out if batched else out[0]


def _cache_dir():
    return os.environ.get("FCS_CACHE_DIR")


class PretrainedEmbedder:
    """Wraps a Hugging Face CLIP checkpoint. Outputs are L2-normalized."""

    name = "clip"
    _MEAN = (0.48145466, 0.4578275, 0.40821073)
    _STD = (0.26862954, 0.26130258, 0.27577711)

    def __init__(self, model, tokenizer, locator):
        self.model = model.eval().requires_grad_(False)
        self.tokenizer = tokenizer
        self.locator = str(locator)
        self.dim = model.config.projection_dim
        self.image_size = model.config.vision_config.image_size

    @property
    def fingerprint(self):
        return f"{self.name}({self.locator})"

    @staticmethod
    def _features(out):
        # newer transformers return a model output object instead of a tensor
        return out if isinstance(out, torch.Tensor) else out.pooler_output

    def embed_text(self, prompt, dtype=torch.float32):
        if not prompt.strip():
            raise InvalidInputError("prompt is empty")
        tokens = self.tokenizer([prompt], padding=True, return_tensors="pt")
        with torch.no_grad():
            feats = self._features(self.model.get_text_features(**tokens))
        return F.normalize(feats[0].to(dtype), dim=-1)

    def embed_image(self, img):
        batched = img.ndim == 4
        x = F.interpolate(_nchw(img), size=(self.image_size, self.image_size), mode="bicubic",
                          align_corners=False)
        mean = torch.tensor(self._MEAN, dtype=x.dtype).view(1, 3, 1, 1)
        std = torch.tensor(self._STD, dtype=x.dtype).view(1, 3, 1, 1)
        weight_dtype = next(self.model.parameters()).dtype
        feats = self._features(self.model.get_image_features(pixel_values=((x - mean) / std).to(weight_dtype)))
        emb = F.normalize(feats.to(img.dtype), dim=-1)
        return emb if batched else emb[0]


class PretrainedStylizer:
    """Wraps a TorchScript style application network.

    The scripted module must accept ``(content NCHW in [0, 1], style (N, 100))``
    and return an NCHW image. Outputs are resized back to the content size and
    clamped to ``[0, 1]``.
    """

    name = "torchscript-stylizer"
    style_dim = STYLE_DIM

    def __init__(self, module, locator):
        self.module = module.eval()
        for p in self.module.parameters():
            p.requires_grad_(False)
        self.locator = str(locator)

    @property
    def fingerprint(self):
        return f"{self.name}({self.locator})"

    def apply(self, content, style):
        if style.shape[-1] != STYLE_DIM:
            raise InvalidInputError(f"style vector must have {STYLE_DIM} components")
        batched = style.ndim == 2
        if not batched:
            style = style[None]
        x = _nchw(content).to(style.dtype)
        if x.shape[0] != style.shape[0]:
            x = x.expand(style.shape[0], -1, -1, -1)
        out = self.module(x, style)
        if out.shape[-2:] != x.shape[-2:]:
            out = F.interpolate(out, size=x.shape[-2:], mode="bilinear", align_corners=False)
        out = out.clamp(0.0, 1.0).permute(0, 2, 3, 1)
        return out if batched else out[0]


def pretrained_embedder_adapter(model_locator):
    """Load a CLIP model directory (or hub id already in the cache)."""
    try:
        from transformers import AutoTokenizer, CLIPModel
    except ImportError as exc:  # pragma: no cover
        raise BackendUnavailableError("transformers is not installed") from exc
    try:
        model = CLIPModel.from_pretrained(model_locator, cache_dir=_cache_dir(), local_files_only=True)
        tokenizer = AutoTokenizer.from_pretrained(model_locator, cache_dir=_cache_dir(),
                                                  local_files_only=True)
    except Exception as exc:
        raise BackendUnavailableError(f"cannot load embedder from {model_locator!r}: {exc}") from exc
    if model.config.projection_dim != TEXT_DIM:
        raise BackendUnavailableError(
            f"embedder at {model_locator!r} has dimension {model.config.projection_dim}, need {TEXT_DIM}")
    return PretrainedEmbedder(model, tokenizer, model_locator)


def pretrained_stylizer_adapter(model_locator):
    """Load a TorchScript style application network from a file path."""
    if not model_locator or not os.path.isfile(model_locator):
        raise BackendUnavailableError(f"no stylizer model at {model_locator!r}")
    try:
        module = torch.jit.load(model_locator, map_location="cpu")
    except Exception as exc:
        raise BackendUnavailableError(f"cannot load stylizer from {model_locator!r}: {exc}") from exc
    return PretrainedStylizer(module, model_locator)


def make_backends(kind="toy", seed=0, embedder_model=None, stylizer_model=None):
    """Build an ``(embedder, stylizer)`` pair by name."""
    if kind == "toy":
        return ToyEmbedder(seed=seed), ToyStylizer(seed=seed)
    if kind == "pretrained":
        if not embedder_model or not stylizer_model:
            raise BackendUnavailableError(
                "pretrained backends need --embedder-model and --stylizer-model (use --backend toy otherwise)")
        return pretrained_embedder_adapter(embedder_model), pretrained_stylizer_adapter(stylizer_model)
    raise BackendUnavailableError(f"unknown backend {kind!r}")
