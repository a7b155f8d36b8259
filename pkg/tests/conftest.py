import json
import os

import pytest
import torch

from textstyler import backends, images, pipeline


@pytest.fixture(scope="session")
def embedder():
    return backends.ToyEmbedder(seed=0)


@pytest.fixture(scope="session")
def stylizer():
    return backends.ToyStylizer(seed=0)


@pytest.fixture(scope="session")
def toy_backends(embedder, stylizer):
    return pipeline.Backends(embedder, stylizer)


@pytest.fixture(scope="session")
def pool():
    return images.demo_content_pool(seed=7)


@pytest.fixture
def content64():
    return images.synthetic_content(3, 64, 64)


def rel_err(a, b, floor=0.0):
    a, b = float(a), float(b)
    return abs(a - b) / max(abs(a), abs(b), floor)


def central_diff(f, x, index, h):
    """Central difference of scalar ``f`` w.r.t. ``x.view(-1)[index]``; ``x`` is not modified."""
    xp = x.detach().clone()
    xm = x.detach().clone()
    xp.view(-1)[index] += h
    xm.view(-1)[index] -= h
    return (float(f(xp)) - float(f(xm))) / (2 * h)


@pytest.fixture(scope="session")
def tiny_clip_dir(tmp_path_factory):
    """A randomly initialized CLIP with 512-d projections and a character-level tokenizer."""
    transformers = pytest.importorskip("transformers")
    d = tmp_path_factory.mktemp("tiny_clip")
    vocab = {"<|startoftext|>": 0, "<|endoftext|>": 1}
    for c in "abcdefghijklmnopqrstuvwxyz":
        vocab[c] = len(vocab)
        vocab[c + "</w>"] = len(vocab)
    (d / "vocab.json").write_text(json.dumps(vocab))
    (d / "merges.txt").write_text("#version: 0.2\n")
    tok = transformers.CLIPTokenizer(str(d / "vocab.json"), str(d / "merges.txt"))
    cfg = transformers.CLIPConfig(
        text_config=dict(vocab_size=len(vocab), hidden_size=32, intermediate_size=37, num_hidden_layers=1,
                         num_attention_heads=2, max_position_embeddings=32, eos_token_id=1, bos_token_id=0,
                         pad_token_id=1),
        vision_config=dict(hidden_size=32, intermediate_size=37, num_hidden_layers=1, num_attention_heads=2,
                           image_size=32, patch_size=8),
        projection_dim=512)
    torch.manual_seed(0)
    transformers.CLIPModel(cfg).save_pretrained(str(d))
    tok.save_pretrained(str(d))
    return str(d)


class _ScriptedStylizer(torch.nn.Module):
    def __init__(self):
        super().__init__()
        self.proj = torch.nn.Linear(100, 3)

    def forward(self, content, style):
        shift = self.proj(style)[:, :, None, None]
        # crop by 2 pixels to mimic a network whose output size differs from its input
        return torch.sigmoid(content[:, :, 2:, 2:] + shift)


@pytest.fixture(scope="session")
def scripted_stylizer_path(tmp_path_factory):
    torch.manual_seed(0)
    path = tmp_path_factory.mktemp("stylizer") / "stylizer.pt"
    torch.jit.script(_ScriptedStylizer().double()).save(str(path))
    return str(path)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
