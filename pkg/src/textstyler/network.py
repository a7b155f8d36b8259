"""The text-to-style prediction network and its checkpoint format."""
import io
import math
import os
import tempfile
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .backends import STYLE_DIM, TEXT_DIM
from .errors import (CheckpointVersionError, CorruptCheckpointError, InvalidInputError,
                     ShapeMismatchError)
from .seeding import rng_for

HIDDEN = (256, 128)
NEGATIVE_SLOPE = 0.2
STAGES = ("init", "pretrained", "integrated", "finetuned")

MAGIC = "FCSNET"
FORMAT_VERSION = 1


class TextStyleNet(nn.Module):
    """512 -> 256 -> 128 -> 100 MLP, leaky ReLU (slope 0.2) between layers, tanh on top."""

    def __init__(self):
        super().__init__()
        self.layer1 = nn.Linear(TEXT_DIM, HIDDEN[0])
        self.layer2 = nn.Linear(HIDDEN[0], HIDDEN[1])
        self.layer3 = nn.Linear(HIDDEN[1], STYLE_DIM)
        self.stage = "init"
        self.fingerprint = ""

    def forward(self, text_emb):
        if text_emb.shape[-1] != TEXT_DIM:
            raise InvalidInputError(f"text embedding must have {TEXT_DIM} components, "
                                    f"got {text_emb.shape[-1]}")
        x = nn.functional.leaky_relu(self.layer1(text_emb), NEGATIVE_SLOPE)
        x = nn.functional.leaky_relu(self.layer2(x), NEGATIVE_SLOPE)
        return torch.tanh(self.layer3(x))


def activation_pattern(net, text_emb):
    """Signs of both hidden pre-activations; a change means a leaky-ReLU kink was crossed."""
    with torch.no_grad():
        z1 = net.layer1(text_emb)
        z2 = net.layer2(nn.functional.leaky_relu(z1, NEGATIVE_SLOPE))
    return torch.cat([(z1 > 0).flatten(), (z2 > 0).flatten()])


def init(seed, dtype=torch.float32):
    """Fan-in scaled uniform weights, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``; zero biases."""
    net = TextStyleNet()
    with torch.no_grad():
        for name in ("layer1", "layer2", "layer3"):
            layer = getattr(net, name)
            bound = 1.0 / math.sqrt(layer.in_features)
            w = rng_for("textstyle-init", seed, name).uniform(-bound, bound, size=tuple(layer.weight.shape))
            layer.weight.copy_(torch.from_numpy(w))
            layer.bias.zero_()
    return net.to(dtype)


def forward(net, text_emb):
    return net(text_emb)


def parameter_count(net, names=None):
    return sum(p.numel() for n, p in net.named_parameters() if names is None or n in names)


@dataclass(frozen=True)
class ParameterMask:
    """Names of the parameters an optimizer is allowed to touch."""

    names: frozenset

    def trainable(self, net):
        return [p for n, p in net.named_parameters() if n in self.names]

    def count(self, net):
        return parameter_count(net, self.names)

    def apply_to_grad(self, net):
        for n, p in net.named_parameters():
            if n not in self.names and p.grad is not None:
                p.grad.zero_()

    def freeze_others(self, net):
        for n, p in net.named_parameters():
            p.requires_grad_(n in self.names)


def finetune_mask(net=None):
    return ParameterMask(frozenset({"layer3.weight", "layer3.bias"}))


def expected_shapes():
    ref = TextStyleNet()
    return {n: tuple(p.shape) for n, p in ref.named_parameters()}


def to_bytes(net):
    arrays = [(n, p.detach().cpu().numpy().astype("<f4")) for n, p in net.named_parameters()]
    lines = [f"{MAGIC} v{FORMAT_VERSION}", f"stage {net.stage}",
             f"fingerprint {net.fingerprint or '-'}", f"arrays {len(arrays)}"]
    offset = 0
    for name, arr in arrays:
        lines.append(f"{name} float32 {','.join(map(str, arr.shape))} {offset}")
        offset += arr.nbytes
    lines.append(f"payload {offset}")
    lines.append("end")
    buf = io.BytesIO()
    buf.write(("\n".join(lines) + "\n").encode("ascii"))
    for _, arr in arrays:
        buf.write(arr.tobytes(order="C"))
    return buf.getvalue()


def save(net, path):
    """Write atomically so a crashed save never leaves a half-written checkpoint."""
    data = to_bytes(net)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    with os.fdopen(fd, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _read_line(buf):
    line = buf.readline()
    if not line.endswith(b"\n"):
        raise CorruptCheckpointError("checkpoint header is truncated")
    try:
        return line[:-1].decode("ascii")
    except UnicodeDecodeError as exc:
        raise CorruptCheckpointError("checkpoint header is not ASCII") from exc


def from_bytes(data, dtype=torch.float32):
    buf = io.BytesIO(data)
    first = _read_line(buf).split()
    if len(first) != 2 or first[0] != MAGIC:
        raise CorruptCheckpointError("not a text-style network checkpoint")
    if first[1] != f"v{FORMAT_VERSION}":
        raise CheckpointVersionError(f"unsupported checkpoint version {first[1]!r}")
    try:
        stage = _read_line(buf).split(" ", 1)[1]
        fingerprint = _read_line(buf).split(" ", 1)[1]
        n_arrays = int(_read_line(buf).split()[1])
        manifest = []
        for _ in range(n_arrays):
            name, kind, shape, offset = _read_line(buf).split()
            manifest.append((name, kind, tuple(int(s) for s in shape.split(",")), int(offset)))
        payload_size = int(_read_line(buf).split()[1])
        if _read_line(buf) != "end":
            raise CorruptCheckpointError("missing end of header")
    except (IndexError, ValueError) as exc:
        raise CorruptCheckpointError(f"malformed checkpoint header: {exc}") from exc

    payload = buf.read()
    if len(payload) != payload_size:
        raise CorruptCheckpointError(f"payload is {len(payload)} bytes, header says {payload_size}")

    shapes = expected_shapes()
    if {m[0] for m in manifest} != set(shapes):
        raise ShapeMismatchError(f"checkpoint arrays {sorted(m[0] for m in manifest)} "
                                 f"do not match {sorted(shapes)}")
    net = TextStyleNet()
    state = {}
    for name, kind, shape, offset in manifest:
        if kind != "float32":
            raise CorruptCheckpointError(f"{name}: unsupported dtype {kind}")
        if shape != shapes[name]:
            raise ShapeMismatchError(f"{name}: checkpoint shape {shape}, expected {shapes[name]}")
        nbytes = 4 * int(np.prod(shape))
        if offset < 0 or offset + nbytes > payload_size:
            raise CorruptCheckpointError(f"{name}: array extends past the payload")
        arr = np.frombuffer(payload, dtype="<f4", count=nbytes // 4, offset=offset).reshape(shape)
        state[name] = torch.from_numpy(arr.copy())
    net.load_state_dict(state)
    net.stage = stage
    net.fingerprint = "" if fingerprint == "-" else fingerprint
    return net.to(dtype)


def load(path, dtype=torch.float32):
    with open(path, "rb") as fh:
        return from_bytes(fh.read(), dtype=dtype)


def clone(net):
    """Deep copy that keeps the stage tag and fingerprint."""
    other = TextStyleNet().to(next(net.parameters()).dtype)
    other.load_state_dict(net.state_dict())
    other.stage = net.stage
    other.fingerprint = net.fingerprint
    return other
