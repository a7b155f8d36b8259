import numpy as np
import pytest
import torch

from textstyler import backends
from textstyler.backends import STYLE_DIM, TEXT_DIM, smooth_clamp
from textstyler.errors import BackendUnavailableError, InvalidInputError

from conftest import central_diff, rel_err


def test_embed_text_is_deterministic(embedder):
    assert torch.equal(embedder.embed_text("blue"), embedder.embed_text("blue"))
    other = backends.ToyEmbedder(seed=0)
    assert torch.equal(embedder.embed_text("blue"), other.embed_text("blue"))


def test_embed_text_unit_norm_and_dim(embedder):
    v = embedder.embed_text("green knitted")
    assert v.shape == (TEXT_DIM,)
    assert abs(float(v.norm()) - 1.0) < 1e-6


def test_embed_text_ignores_token_order_and_case(embedder):
    a = embedder.embed_text("blue lines", dtype=torch.float64)
    b = embedder.embed_text("lines  Blue", dtype=torch.float64)
    assert abs(float(a @ b) - 1.0) < 1e-6


def test_embed_text_token_sum_construction(embedder):
    # direct recomputation of the documented construction
    t1, t2 = embedder.token_vector("red"), embedder.token_vector("cracked")
    expected = (t1 + t2) / (t1 + t2).norm()
    got = embedder.embed_text("red cracked", dtype=torch.float64)
    assert torch.allclose(got, expected, atol=1e-12)


@pytest.mark.parametrize("prompt", ["", "   ", "\t\n"])
def test_embed_text_rejects_empty(embedder, prompt):
    with pytest.raises(InvalidInputError):
        embedder.embed_text(prompt)


def test_embed_image_deterministic_and_unit(embedder, content64):
    a, b = embedder.embed_image(content64), embedder.embed_image(content64.clone())
    assert torch.equal(a, b)
    assert a.shape == (TEXT_DIM,)
    assert abs(float(a.norm()) - 1.0) < 1e-6


def test_embed_image_batched_matches_single(embedder, pool):
    batch = embedder.embed_image(torch.stack(pool).double())
    for k, img in enumerate(pool):
        assert torch.allclose(batch[k], embedder.embed_image(img.double()), atol=1e-12)


def test_embed_image_pixel_gradient_matches_finite_differences(embedder):
    rng = np.random.default_rng(1)
    img = torch.from_numpy(rng.uniform(0.1, 0.9, size=(40, 36, 3)))
    for coord in (0, 17, 311, 511):
        x = img.clone().requires_grad_(True)
        embedder.embed_image(x)[coord].backward()
        for pix in rng.choice(img.numel(), size=6, replace=False):
            fd = central_diff(lambda z: embedder.embed_image(z)[coord], img, int(pix), 1e-4)
            assert rel_err(x.grad.view(-1)[pix], fd, floor=1e-6) < 1e-5


def test_glyph_image_embeds_to_its_token(embedder):
    glyph = embedder.glyph("lines")
    assert glyph.min() >= 0 and glyph.max() <= 1
    assert torch.allclose(embedder.embed_image(glyph), embedder.embed_text("lines", dtype=torch.float64),
                          atol=1e-12)


def test_zero_style_is_neutral(stylizer, content64):
    out = stylizer.apply(content64, torch.zeros(STYLE_DIM, dtype=torch.float64))
    expected = 1.0 / (1.0 + torch.exp(-4.0 * (content64 - 0.5)))
    assert torch.allclose(out, expected, atol=1e-15)
    assert torch.equal(out, smooth_clamp(content64))


def test_stylizer_preserves_shape(stylizer):
    content = torch.rand(64, 48, 3, generator=torch.Generator().manual_seed(0), dtype=torch.float64)
    for seed in range(3):
        style = torch.from_numpy(np.random.default_rng(seed).uniform(-1, 1, STYLE_DIM))
        out = stylizer.apply(content, style)
        assert out.shape == (64, 48, 3)
        assert bool(((out > 0) & (out < 1)).all())


def test_stylizer_batched_matches_single(stylizer, content64):
    styles = torch.from_numpy(np.random.default_rng(3).uniform(-1, 1, (4, STYLE_DIM)))
    batch = stylizer.apply(content64, styles)
    for k in range(4):
        assert torch.allclose(batch[k], stylizer.apply(content64, styles[k]), atol=1e-14)


def test_stylizer_rejects_wrong_style_dim(stylizer, content64):
    with pytest.raises(InvalidInputError):
        stylizer.apply(content64, torch.zeros(99, dtype=torch.float64))


def test_stylizer_jvp_matches_finite_differences(stylizer):
    rng = np.random.default_rng(5)
    content = torch.from_numpy(rng.uniform(0, 1, (16, 16, 3)))
    style = torch.from_numpy(rng.uniform(-0.9, 0.9, STYLE_DIM))
    direction = torch.from_numpy(rng.standard_normal(STYLE_DIM))
    _, jvp = torch.autograd.functional.jvp(lambda s: stylizer.apply(content, s), style, direction)
    h = 1e-4
    fd = (stylizer.apply(content, style + h * direction) - stylizer.apply(content, style - h * direction)) / (2 * h)
    assert float((jvp - fd).norm() / fd.norm()) < 1e-5


def test_composed_style_gradient_matches_finite_differences(embedder, stylizer):
    rng = np.random.default_rng(11)
    for trial in range(20):
        content = torch.from_numpy(rng.uniform(0, 1, (32, 40, 3)))
        style = torch.from_numpy(rng.uniform(-0.9, 0.9, STYLE_DIM))
        probe = torch.from_numpy(rng.standard_normal(TEXT_DIM))
        f = lambda s: embedder.embed_image(stylizer.apply(content, s)) @ probe  # noqa: E731
        s = style.clone().requires_grad_(True)
        f(s).backward()
        for k in rng.choice(STYLE_DIM, size=5, replace=False):
            fd = central_diff(f, style, int(k), 1e-4)
            assert rel_err(s.grad[k], fd, floor=1e-6) < 1e-4, (trial, k)


def test_toy_backends_ignore_dtype_of_inputs(embedder, stylizer, content64):
    s32 = torch.zeros(STYLE_DIM, dtype=torch.float32)
    assert stylizer.apply(content64, s32).dtype == torch.float32
    assert embedder.embed_image(content64.float()).dtype == torch.float32


def test_make_backends_toy():
    emb, sty = backends.make_backends("toy")
    assert isinstance(emb, backends.ToyEmbedder) and isinstance(sty, backends.ToyStylizer)


def test_pretrained_requires_locators():
    with pytest.raises(BackendUnavailableError):
        backends.make_backends("pretrained")


def test_unavailable_embedder_locator(tmp_path):
    with pytest.raises(BackendUnavailableError):
        backends.pretrained_embedder_adapter(str(tmp_path / "missing"))


def test_unavailable_stylizer_locator(tmp_path):
    with pytest.raises(BackendUnavailableError):
        backends.pretrained_stylizer_adapter(str(tmp_path / "missing.pt"))
    bad = tmp_path / "bad.pt"
    bad.write_bytes(b"not a model")
    with pytest.raises(BackendUnavailableError):
        backends.pretrained_stylizer_adapter(str(bad))


def test_pretrained_embedder_adapter_contract(tiny_clip_dir):
    emb = backends.pretrained_embedder_adapter(tiny_clip_dir)
    t = emb.embed_text("blue lines")
    assert t.shape == (TEXT_DIM,)
    assert abs(float(t.norm()) - 1) < 1e-5
    assert torch.equal(t, emb.embed_text("blue lines"))
    img = torch.rand(40, 48, 3, dtype=torch.float64, generator=torch.Generator().manual_seed(0))
    x = img.clone().requires_grad_(True)
    v = emb.embed_image(x)
    assert v.shape == (TEXT_DIM,) and abs(float(v.detach().norm()) - 1) < 1e-5
    v.sum().backward()
    assert x.grad is not None and float(x.grad.abs().sum()) > 0
    assert torch.equal(emb.embed_image(img), emb.embed_image(img))


def test_pretrained_stylizer_adapter_contract(scripted_stylizer_path):
    sty = backends.pretrained_stylizer_adapter(scripted_stylizer_path)
    assert sty.style_dim == 100
    content = torch.rand(40, 36, 3, dtype=torch.float64, generator=torch.Generator().manual_seed(1))
    style = torch.zeros(100, dtype=torch.float64, requires_grad=True)
    out = sty.apply(content, style)
    assert out.shape == content.shape
    assert float(out.min()) >= 0 and float(out.max()) <= 1
    out.sum().backward()
    assert float(style.grad.abs().sum()) > 0
    with pytest.raises(InvalidInputError):
        sty.apply(content, torch.zeros(64, dtype=torch.float64))
