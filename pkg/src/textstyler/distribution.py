"""Gaussian fit over style embeddings and the Mahalanobis penalty."""
import io
import os
import tempfile
from dataclasses import dataclass

import numpy as np
import torch

from .backends import STYLE_DIM
from .errors import FormatError, InsufficientDataError, InvalidInputError, SingularCovarianceError

DEFAULT_RIDGE = 1e-6
MAGIC = "FCSDIST"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class StyleDistribution:
    mean: np.ndarray
    covariance: np.ndarray
    cholesky: np.ndarray  # lower factor of covariance + ridge * I
    ridge: float
    sample_count: int

    @property
    def dim(self):
        return self.mean.shape[0]

    @classmethod
    def from_moments(cls, mean, covariance, ridge, sample_count):
        mean = np.ascontiguousarray(mean, dtype=np.float64)
        covariance = np.ascontiguousarray(covariance, dtype=np.float64)
        regularized = covariance + ridge * np.eye(mean.shape[0])
        try:
            chol = np.linalg.cholesky(regularized)
        except np.linalg.LinAlgError as exc:
            raise SingularCovarianceError(
                f"covariance + {ridge:g} * I is not positive definite; increase the ridge") from exc
        return cls(mean, covariance, chol, float(ridge), int(sample_count))


def fit(embeddings, ridge=DEFAULT_RIDGE):
    """Sample mean and unbiased (n - 1) covariance of an ``(n, d)`` array."""
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidInputError("embeddings must be a 2-D array")
    if x.shape[0] < 2:
        raise InsufficientDataError(f"need at least 2 embeddings to fit, got {x.shape[0]}")
    if ridge < 0 or not np.isfinite(ridge):
        raise InvalidInputError("ridge must be a finite non-negative number")
    mean = x.mean(axis=0)
    centred = x - mean
    cov = centred.T @ centred / (x.shape[0] - 1)
    cov = 0.5 * (cov + cov.T)
    return StyleDistribution.from_moments(mean, cov, ridge, x.shape[0])


def mahalanobis(dist, x):
    """Squared Mahalanobis distance ``(x - mu)^T (Sigma + ridge I)^-1 (x - mu)``.

    Accepts a torch tensor (differentiable, batched over leading axes) or
    anything array-like, in which case a float or numpy array is returned.
    """
    as_numpy = not isinstance(x, torch.Tensor)
    t = torch.as_tensor(np.asarray(x, dtype=np.float64)) if as_numpy else x
    if t.shape[-1] != dist.dim:
        raise InvalidInputError(f"expected {dist.dim}-d input, got {t.shape[-1]}")
    mean = torch.from_numpy(dist.mean).to(t.dtype)
    chol = torch.from_numpy(dist.cholesky).to(t.dtype)
    diff = (t - mean).reshape(-1, dist.dim).T
    z = torch.linalg.solve_triangular(chol, diff, upper=False)
    q = (z * z).sum(dim=0).reshape(t.shape[:-1])
    if as_numpy:
        q = q.numpy()
        return float(q) if q.ndim == 0 else q
    return q


def to_bytes(dist):
    header = (f"{MAGIC} v{FORMAT_VERSION}\ndim {dist.dim}\nn {dist.sample_count}\n"
              f"ridge {dist.ridge!r}\nend\n")
    return (header.encode("ascii") + dist.mean.astype("<f8").tobytes()
            + dist.covariance.astype("<f8").tobytes())


def from_bytes(data, dim=STYLE_DIM):
    buf = io.BytesIO(data)
    try:
        lines = [buf.readline().decode("ascii").rstrip("\n") for _ in range(5)]
        magic, version = lines[0].split()
        file_dim = int(lines[1].split()[1])
        n = int(lines[2].split()[1])
        ridge = float(lines[3].split()[1])
    except (ValueError, IndexError, UnicodeDecodeError) as exc:
        raise FormatError(f"malformed distribution header: {exc}") from exc
    if magic != MAGIC or lines[4] != "end":
        raise FormatError("not a style distribution file")
    if version != f"v{FORMAT_VERSION}":
        raise FormatError(f"unsupported distribution format {version}")
    if dim is not None and file_dim != dim:
        raise FormatError(f"distribution has dimension {file_dim}, expected {dim}")
    payload = buf.read()
    expected = 8 * (file_dim + file_dim * file_dim)
    if len(payload) != expected:
        raise FormatError(f"payload is {len(payload)} bytes, expected {expected}")
    mean = np.frombuffer(payload, dtype="<f8", count=file_dim).astype(np.float64)
    cov = np.frombuffer(payload, dtype="<f8", offset=8 * file_dim).reshape(file_dim, file_dim)
    return StyleDistribution.from_moments(mean, cov.astype(np.float64), ridge, n)


def save(dist, path):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".dist-")
    with os.fdopen(fd, "wb") as fh:
        fh.write(to_bytes(dist))
    os.replace(tmp, path)


def load(path, dim=STYLE_DIM):
    with open(path, "rb") as fh:
        return from_bytes(fh.read(), dim=dim)
