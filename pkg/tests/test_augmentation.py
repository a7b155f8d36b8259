import numpy as np
import pytest
import torch

from textstyler import augmentation
from textstyler.errors import InvalidConfigError
from textstyler.images import synthetic_content


def test_full_size_crop_is_whole_image():
    img = synthetic_content(0, 40, 40)
    ps = augmentation.random_crops(img, 4, 40, seed=3)
    assert len(ps) == 4
    for patch in ps.patches:
        assert torch.equal(patch, img)


def test_crops_in_bounds_and_deterministic():
    img = synthetic_content(1, 50, 70)
    a = augmentation.random_crops(img, 5, 20, seed=11)
    b = augmentation.random_crops(img, 5, 20, seed=11)
    assert len(a) == 5 and a.coords == b.coords
    for (top, left), patch in zip(a.coords, a.patches):
        assert 0 <= top <= 30 and 0 <= left <= 50
        assert torch.equal(patch, img[top:top + 20, left:left + 20])


def test_crop_substreams_do_not_depend_on_count():
    img = synthetic_content(1, 50, 50)
    few = augmentation.random_crops(img, 3, 16, seed=2).coords
    many = augmentation.random_crops(img, 9, 16, seed=2).coords
    assert many[:3] == few


def test_crop_too_large():
    with pytest.raises(InvalidConfigError):
        augmentation.random_crops(synthetic_content(0, 32, 40), 2, 33, seed=0)


def test_zero_distortion_is_bit_exact_identity():
    patch = synthetic_content(2, 32, 32)
    assert augmentation.random_perspective(patch, 0.0, seed=5) is patch
    stack = torch.stack([patch, patch.flip(0)])
    assert torch.equal(augmentation.augment_patches(stack, 0.0, seed=5), stack)


def test_warp_shape_range_and_determinism():
    patch = synthetic_content(3, 32, 32)
    out = augmentation.random_perspective(patch, 0.5, seed=9)
    assert out.shape == patch.shape
    assert float(out.min()) >= 0.0 and float(out.max()) <= 1.0
    assert torch.equal(out, augmentation.random_perspective(patch, 0.5, seed=9))
    assert not torch.equal(out, augmentation.random_perspective(patch, 0.5, seed=10))


def test_batched_warp_matches_single_patch_warp():
    patches = torch.stack([synthetic_content(k, 24, 24) for k in range(4)])
    batched = augmentation.augment_patches(patches, 0.5, seed=4)
    for i in range(4):
        single = augmentation.random_perspective(patches[i], 0.5, seed=4, index=i)
        assert torch.allclose(batched[i], single, atol=1e-12)


def test_homography_matches_hand_computed_matrix():
    # unit square -> scaled and shifted square: H = [[2,0,1],[0,3,-1],[0,0,1]]
    src = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
    dst = src * [2, 3] + [1, -1]
    expected = np.array([[2, 0, 1], [0, 3, -1], [0, 0, 1]], dtype=float)
    assert np.allclose(augmentation.solve_homography(src, dst), expected, atol=1e-8)


def test_homography_matches_independent_solve():
    # projective case; oracle solves the DLT null space with an SVD instead of an 8x8 solve
    src = np.array([[0, 0], [31, 0], [31, 31], [0, 31]], dtype=float)
    dst = np.array([[3, 2], [27, 5], [29, 30], [1, 26]], dtype=float)
    rows = []
    for (x, y), (u, v) in zip(src, dst):
        rows.append([x, y, 1, 0, 0, 0, -u * x, -u * y, -u])
        rows.append([0, 0, 0, x, y, 1, -v * x, -v * y, -v])
    h = np.linalg.svd(np.array(rows))[2][-1].reshape(3, 3)
    h /= h[2, 2]
    got = augmentation.solve_homography(src, dst)
    assert np.allclose(got, h, atol=1e-8)
    mapped = np.c_[src, np.ones(4)] @ got.T
    assert np.allclose(mapped[:, :2] / mapped[:, 2:], dst, atol=1e-8)


def test_warp_is_differentiable():
    patch = synthetic_content(4, 16, 16).requires_grad_(True)
    augmentation.random_perspective(patch, 0.5, seed=1).sum().backward()
    assert patch.grad is not None and float(patch.grad.abs().sum()) > 0


def test_bad_distortion():
    with pytest.raises(InvalidConfigError):
        augmentation.random_perspective(synthetic_content(0, 16, 16), 1.5, seed=0)
