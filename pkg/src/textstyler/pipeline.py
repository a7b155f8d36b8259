"""Data generation, pre-training, integrated training, fine-tuning and inference.

The four training stages share one objective (``losses.objective_terms`` fed
into ``losses.total_loss``). Every random choice (initial weights, content
image per step, patch crops and warps, minibatch order) is derived from the
stage seed, so with toy backends each stage is a pure function of its inputs.
"""
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from . import network
from .errors import DivergedError, InvalidConfigError, InvalidInputError, NumericError
from .losses import SOURCE_TEXT, LossWeights, PatchConfig, objective_terms, text_direction, total_loss
from .seeding import derive_seed, rng_for

TERMS = ("dir", "patch", "dis")


@dataclass(frozen=True)
class StageConfig:
    """Optimization settings for one stage.

    ``steps`` counts optimizer steps for stages 1 and 4 and epochs for
    stages 2 and 3.
    """

    steps: int = 200
    lr: float = 5e-4
    batch_size: int = 8
    weights: LossWeights = field(default_factory=LossWeights)
    patch: PatchConfig = field(default_factory=lambda: PatchConfig(patch_size=32))
    seed: int = 0
    source_text: str = SOURCE_TEXT
    mode: str = "network"  # stage 1: "network" overfits the net, "embedding" optimizes the vector

    def __post_init__(self):
        if self.steps < 0:
            raise InvalidConfigError("steps must be >= 0")
        if not (self.lr > 0 and math.isfinite(self.lr)):
            raise InvalidConfigError("learning rate must be positive")
        if self.batch_size < 1:
            raise InvalidConfigError("batch_size must be positive")
        if self.mode not in ("network", "embedding"):
            raise InvalidConfigError(f"unknown stage-1 mode {self.mode!r}")


STAGE_DEFAULTS = {
    "stage1": StageConfig(steps=200, lr=5e-4),
    "stage2": StageConfig(steps=200, lr=1e-3, batch_size=16),
    "stage3": StageConfig(steps=30, lr=1e-4, batch_size=8),
    "stage4": StageConfig(steps=50, lr=5e-4),
}


def stage_config(stage, **overrides):
    return replace(STAGE_DEFAULTS[stage], **overrides)


@dataclass(frozen=True)
class Backends:
    embedder: object
    stylizer: object

    @property
    def fingerprint(self):
        return f"{self.embedder.fingerprint}+{self.stylizer.fingerprint}"


@dataclass
class PairRecord:
    prompt: str
    text_embedding: np.ndarray
    style_embedding: np.ndarray
    loss: float
    steps: int

    def to_json(self):
        return json.dumps({
            "prompt": self.prompt,
            "text_embedding": [float(v) for v in self.text_embedding],
            "style_embedding": [float(v) for v in self.style_embedding],
            "loss": float(self.loss),
            "steps": int(self.steps),
        })

    @classmethod
    def from_json(cls, line):
        obj = json.loads(line)
        return cls(obj["prompt"], np.asarray(obj["text_embedding"], dtype=np.float32),
                   np.asarray(obj["style_embedding"], dtype=np.float32), float(obj["loss"]),
                   int(obj["steps"]))


def save_pairs(pairs, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in pairs:
            fh.write(rec.to_json() + "\n")


def load_pairs(path):
    with open(path, encoding="utf-8") as fh:
        return [PairRecord.from_json(line) for line in fh if line.strip()]


class _Objective:
    """Caches per-prompt text directions and per-image content embeddings."""

    def __init__(self, backends, content_pool, dist, cfg, dtype=torch.float32):
        if not content_pool:
            raise InvalidInputError("content pool is empty")
        self.backends = backends
        self.dist = dist
        self.cfg = cfg
        self.dtype = dtype
        self.pool = [c.to(dtype) for c in content_pool]
        with torch.no_grad():
            self.content_embs = [backends.embedder.embed_image(c) for c in self.pool]
        self._directions = {}
        self._text = {}

    def text(self, prompt):
        if prompt not in self._text:
            self._text[prompt] = self.backends.embedder.embed_text(prompt, dtype=self.dtype)
        return self._text[prompt]

    def direction(self, prompt):
        if prompt not in self._directions:
            self._directions[prompt] = text_direction(self.backends.embedder, prompt,
                                                      self.cfg.source_text, dtype=self.dtype)
        return self._directions[prompt]

    def terms(self, style, prompt, content_index, patch_seed):
        return objective_terms(style, self.pool[content_index], prompt, self.backends.embedder,
                               self.backends.stylizer, self.dist, self.cfg.patch.with_seed(patch_seed),
                               t_src=self.cfg.source_text, delta_t=self.direction(prompt),
                               content_emb=self.content_embs[content_index])

    def total(self, style, prompt, content_index, patch_seed):
        terms = self.terms(style, prompt, content_index, patch_seed)
        return total_loss(terms, self.cfg.weights), terms

    def evaluate(self, style, prompt, eval_seed=0):
        """Mean loss over every content image, with patch seeds fixed by ``eval_seed``."""
        sums = dict.fromkeys(("total",) + TERMS, 0.0)
        with torch.no_grad():
            for k in range(len(self.pool)):
                tot, terms = self.total(style, prompt, k, derive_seed("eval", eval_seed, k))
                sums["total"] += float(tot)
                for t in TERMS:
                    sums[t] += float(terms[t].detach())
        return {k: v / len(self.pool) for k, v in sums.items()}


def _step_loss(obj, style, prompt, content_index, patch_seed, step):
    """``obj.total`` with non-finite terms reported as divergence at ``step``."""
    try:
        loss, terms = obj.total(style, prompt, content_index, patch_seed)
    except NumericError as exc:
        raise DivergedError(f"{exc} at step {step}", step=step, term=exc.term) from exc
    _check_finite(loss, step)
    return loss, terms


def _check_finite(value, step, term="total"):
    if not math.isfinite(float(value.detach() if isinstance(value, torch.Tensor) else value)):
        raise DivergedError(f"{term} loss became non-finite at step {step}", step=step, term=term)


def evaluate_objective(style, prompt, content_pool, backends, dist, cfg, eval_seed=0):
    """Fixed-seed objective for a style vector, averaged over the content pool."""
    return _Objective(backends, content_pool, dist, cfg, dtype=style.dtype).evaluate(style, prompt, eval_seed)


def evaluate_net(net, prompts, content_pool, backends, dist, cfg, eval_seed=0):
    """Mean fixed-seed objective of a network over several prompts."""
    dtype = next(net.parameters()).dtype
    return _evaluate_prompts(net, _Objective(backends, content_pool, dist, cfg, dtype=dtype), prompts, eval_seed)


def _evaluate_prompts(net, obj, prompts, eval_seed=0):
    rows = []
    with torch.no_grad():
        for prompt in prompts:
            rows.append(obj.evaluate(net(obj.text(prompt)), prompt, eval_seed))
    return {k: float(np.mean([r[k] for r in rows])) for k in rows[0]}


def stage1_generate_pair(prompt, content_pool, cfg, backends, dist=None):
    """Overfit a fresh network to one prompt and keep its prediction as the label."""
    seed = derive_seed("stage1", cfg.seed, prompt)
    obj = _Objective(backends, content_pool, dist, cfg)
    text_emb = obj.text(prompt)
    rng = rng_for("stage1-content", seed)

    if cfg.mode == "network":
        net = network.init(seed)
        params = list(net.parameters())
        predict = lambda: net(text_emb)  # noqa: E731
    else:
        z = torch.zeros(text_emb.shape[:-1] + (100,), requires_grad=True)
        params = [z]
        predict = lambda: torch.tanh(z)  # noqa: E731
    opt = torch.optim.Adam(params, lr=cfg.lr)

    for step in range(cfg.steps):
        k = int(rng.integers(len(obj.pool)))
        loss, _ = _step_loss(obj, predict(), prompt, k, derive_seed(seed, "patch", step), step)
        opt.zero_grad()
        loss.backward()
        opt.step()

    with torch.no_grad():
        style = predict().detach()
    final = obj.evaluate(style, prompt)["total"]
    _check_finite(final, cfg.steps)
    return PairRecord(prompt, text_emb.detach().numpy().copy(), style.numpy().copy(), final, cfg.steps)


def generate_pairs(prompts, content_pool, cfg, backends, dist=None, progress=None):
    """Stage 1 over a corpus. Prompts are independent; seeds come from ``(cfg.seed, prompt)``."""
    out = []
    for i, prompt in enumerate(prompts):
        out.append(stage1_generate_pair(prompt, content_pool, cfg, backends, dist))
        if progress is not None:
            progress(i + 1, len(prompts), out[-1])
    return out


def _pair_tensors(pairs):
    x = torch.from_numpy(np.stack([p.text_embedding for p in pairs]).astype(np.float32))
    y = torch.from_numpy(np.stack([p.style_embedding for p in pairs]).astype(np.float32))
    return x, y


def pair_mse(net, pairs):
    x, y = _pair_tensors(pairs)
    with torch.no_grad():
        return float(torch.mean((net(x) - y) ** 2))


def stage2_pretrain(pairs, cfg, net=None, trace=None):
    """Supervised regression of the network onto stage-1 labels (mean squared error)."""
    if not pairs:
        raise InvalidInputError("need at least one pair to pre-train")
    net = network.init(derive_seed("stage2", cfg.seed)) if net is None else network.clone(net)
    x, y = _pair_tensors(pairs)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    for epoch in range(cfg.steps):
        order = rng_for("stage2-order", cfg.seed, epoch).permutation(len(pairs))
        for start in range(0, len(order), cfg.batch_size):
            idx = torch.from_numpy(order[start:start + cfg.batch_size])
            loss = torch.mean((net(x[idx]) - y[idx]) ** 2)
            _check_finite(loss, epoch, "mse")
            opt.zero_grad()
            loss.backward()
            opt.step()
        if trace is not None:
            trace.append((epoch, "mse", pair_mse(net, pairs)))
    net.stage = "pretrained"
    return net


def stage3_integrated_train(net, prompts, content_pool, dist, cfg, backends, trace=None):
    """End-to-end training of the network through the frozen backends.

    Each epoch visits every prompt once in a seeded order, pairing it with a
    content image drawn uniformly from the pool; one optimizer step per
    minibatch of ``cfg.batch_size`` prompts. ``trace`` (a list) receives
    ``(epoch, term, value)`` rows: ``train_total`` is the running mean of the
    sampled training losses, and ``total``/``dir``/``patch``/``dis`` are the
    end-of-epoch fixed-seed evaluation over every prompt and content image.
    """
    if dist is None:
        raise InvalidConfigError("integrated training needs a fitted style distribution")
    prompts = list(prompts)
    if not prompts:
        raise InvalidInputError("prompt corpus is empty")
    net = network.clone(net)
    obj = _Objective(backends, content_pool, dist, cfg)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    for epoch in range(cfg.steps):
        rng = rng_for("stage3", cfg.seed, epoch)
        order = rng.permutation(len(prompts))
        sums = dict.fromkeys(("total",) + TERMS, 0.0)
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            styles = net(torch.stack([obj.text(prompts[i]) for i in batch]))
            batch_loss = 0.0
            for row, i in enumerate(batch):
                k = int(rng.integers(len(obj.pool)))
                loss, terms = _step_loss(obj, styles[row], prompts[i], k,
                                         derive_seed("stage3", cfg.seed, epoch, int(i)), epoch)
                batch_loss = batch_loss + loss
                sums["total"] += float(loss.detach())
                for t in TERMS:
                    sums[t] += float(terms[t].detach())
            batch_loss = batch_loss / len(batch)
            _check_finite(batch_loss, epoch)
            opt.zero_grad()
            batch_loss.backward()
            opt.step()
        if trace is not None:
            trace.append((epoch, "train_total", sums["total"] / len(prompts)))
            for term, value in _evaluate_prompts(net, obj, prompts).items():
                trace.append((epoch, term, value))
    net.stage = "integrated"
    return net


def stage4_finetune(net, prompt, content, dist, cfg, backends):
    """Per-query optimization of the last layer only."""
    if net.stage not in ("integrated", "pretrained", "finetuned"):
        raise InvalidConfigError(f"fine-tuning expects a trained network, got stage {net.stage!r}")
    net = network.clone(net)
    mask = network.finetune_mask(net)
    mask.freeze_others(net)
    obj = _Objective(backends, [content], dist, cfg)
    text_emb = obj.text(prompt)
    opt = torch.optim.Adam(mask.trainable(net), lr=cfg.lr)
    seed = derive_seed("stage4", cfg.seed, prompt)
    for step in range(cfg.steps):
        loss, _ = _step_loss(obj, net(text_emb), prompt, 0, derive_seed(seed, "patch", step), step)
        opt.zero_grad()
        loss.backward()
        mask.apply_to_grad(net)
        opt.step()
    for p in net.parameters():
        p.requires_grad_(True)
    net.stage = "finetuned"
    return net


def predict_style(net, prompt, embedder):
    with torch.no_grad():
        return net(embedder.embed_text(prompt, dtype=next(net.parameters()).dtype))


def stylize(net, prompt, content, backends):
    """Single pass: text embedding -> style vector -> stylized image."""
    with torch.no_grad():
        style = predict_style(net, prompt, backends.embedder)
        out = backends.stylizer.apply(content.to(style.dtype), style)
    if not torch.isfinite(out).all():
        raise NumericError("stylized image contains non-finite values")
    return out
