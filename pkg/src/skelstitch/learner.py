"""Small numpy networks with explicit backward passes.

Layers cache their last forward input and accumulate parameter gradients
into ``grads`` on ``backward``; call ``zero_grad`` between steps. All
arithmetic is float64.
"""

from __future__ import annotations

import hashlib
from collections import OrderedDict

import numpy as np

from .core import fmt_float
from .errors import FormatError, NoForwardRecorded, TopologyMismatch, ValidationError


def _init_uniform(rng, shape, fan_in):
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    def __init__(self):
        self.params: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self.grads: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self._cache = None

    def _add(self, name, value):
        self.params[name] = np.asarray(value, dtype=np.float64)
        self.grads[name] = np.zeros_like(self.params[name])

    def _cached(self):
        if self._cache is None:
            raise NoForwardRecorded(f"{type(self).__name__}.backward called before forward")
        return self._cache

    def zero_grad(self):
        for g in self.grads.values():
            g[...] = 0.0

    def named_parameters(self, prefix=""):
        for k, v in self.params.items():
            yield prefix + k, v, self.grads[k]

    def __call__(self, x):
        return self.forward(x)


class Conv1d(Module):
    """Temporal convolution over a T x C_in sequence, same length out.

    Padding replicates the first/last frame so T is preserved.
    """

    def __init__(self, c_in, c_out, kernel, dilation=1, rng=None):
        super().__init__()
        if kernel % 2 != 1:
            raise ValidationError("kernel width must be odd for same padding")
        rng = np.random.default_rng(0) if rng is None else rng
        self.kernel, self.dilation = kernel, dilation
        self.pad = dilation * (kernel - 1) // 2
        fan_in = kernel * c_in
        self._add("weight", _init_uniform(rng, (kernel, c_in, c_out), fan_in))
        self._add("bias", _init_uniform(rng, (c_out,), fan_in))

    def _columns(self, x):
        T = x.shape[0]
        xp = np.concatenate([np.repeat(x[:1], self.pad, 0), x, np.repeat(x[-1:], self.pad, 0)])
        idx = np.arange(T)[:, None] + self.dilation * np.arange(self.kernel)[None, :]
        return xp[idx]  # T x kernel x C_in

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.params["weight"].shape[1]:
            raise TopologyMismatch(f"Conv1d expects T x {self.params['weight'].shape[1]}, got {x.shape}")
        cols = self._columns(x)
        self._cache = (x.shape[0], cols)
        return np.einsum("tkc,kco->to", cols, self.params["weight"]) + self.params["bias"]

    def backward(self, g):
        T, cols = self._cached()
        self.grads["weight"] += np.einsum("tkc,to->kco", cols, g)
        self.grads["bias"] += g.sum(0)
        gcols = np.einsum("to,kco->tkc", g, self.params["weight"])
        gxp = np.zeros((T + 2 * self.pad, cols.shape[2]))
        for j in range(self.kernel):
            s = j * self.dilation
            gxp[s:s + T] += gcols[:, j]
        gx = gxp[self.pad:self.pad + T].copy()
        gx[0] += gxp[:self.pad].sum(0)
        gx[-1] += gxp[self.pad + T:].sum(0)
        return gx


class Linear(Module):
    def __init__(self, c_in, c_out, rng=None):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        self._add("weight", _init_uniform(rng, (c_in, c_out), c_in))
        self._add("bias", _init_uniform(rng, (c_out,), c_in))

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        self._cache = x
        return x @ self.params["weight"] + self.params["bias"]

    def backward(self, g):
        x = self._cached()
        self.grads["weight"] += x.T @ g
        self.grads["bias"] += g.sum(0)
        return g @ self.params["weight"].T


class ReLU(Module):
    def forward(self, x):
        self._cache = x > 0
        return np.where(self._cache, x, 0.0)

    def backward(self, g):
        return np.where(self._cached(), g, 0.0)


class L2Normalize(Module):
    """Row-wise x / |x|."""

    eps = 1e-12

    def forward(self, x):
        n = np.maximum(np.linalg.norm(x, axis=-1, keepdims=True), self.eps)
        y = x / n
        self._cache = (y, n)
        return y

    def backward(self, g):
        y, n = self._cached()
        return (g - y * np.sum(g * y, axis=-1, keepdims=True)) / n


class Softmax(Module):
    def forward(self, x):
        y = softmax(x)
        self._cache = y
        return y

    def backward(self, g):
        y = self._cached()
        return y * (g - np.sum(g * y, axis=-1, keepdims=True))


def softmax(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(x):
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


class Sequential(Module):
    def __init__(self, *layers):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, g):
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def named_parameters(self, prefix=""):
        for n, layer in enumerate(self.layers):
            yield from layer.named_parameters(f"{prefix}{n}.")


class Encoder(Sequential):
    """T x V x C skeleton frames -> T x C_out features (two ReLU temporal convs).

    Inputs are standardised per channel with fixed statistics
    (``input_mean`` / ``input_std``, identity until ``fit_input_stats``).
    """

    def __init__(self, joints, dims, hidden=32, out=32, kernel=9, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.joints, self.dims = joints, dims
        self.out_dim = out
        super().__init__(Conv1d(joints * dims, hidden, kernel, rng=rng), ReLU(),
                         Conv1d(hidden, out, kernel, rng=rng), ReLU())
        self.buffers = OrderedDict(input_mean=np.zeros(joints * dims),
                                   input_std=np.ones(joints * dims))

    def fit_input_stats(self, sequences, min_std=1e-3):
        x = np.concatenate([np.asarray(getattr(s, "frames", s)).reshape(len(s), -1) for s in sequences])
        self.buffers["input_mean"][...] = x.mean(0)
        self.buffers["input_std"][...] = np.maximum(x.std(0), min_std)
        return self

    def forward(self, frames):
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim != 3 or frames.shape[1:] != (self.joints, self.dims):
            raise TopologyMismatch(
                f"encoder expects T x {self.joints} x {self.dims}, got {frames.shape}")
        x = (frames.reshape(len(frames), -1) - self.buffers["input_mean"]) / self.buffers["input_std"]
        return super().forward(x)

    def backward(self, g):
        gx = super().backward(g) / self.buffers["input_std"]
        return gx.reshape(len(gx), self.joints, self.dims)

    def named_buffers(self, prefix="encoder."):
        for k, v in self.buffers.items():
            yield prefix + k, v


class ProjectionHead(Sequential):
    def __init__(self, c_in=32, hidden=32, out=16, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        super().__init__(Linear(c_in, hidden, rng), ReLU(), Linear(hidden, out, rng), L2Normalize())


class SegmentationHead(Sequential):
    """Per-frame class logits; ``temporal`` adds a dilated conv stage (E2E mode)."""

    def __init__(self, c_in, classes, temporal=False, hidden=32, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.temporal = temporal
        self.classes = classes
        layers = []
        if temporal:
            layers += [Conv1d(c_in, hidden, 3, dilation=4, rng=rng), ReLU()]
            c_in = hidden
        layers.append(Linear(c_in, classes, rng))
        super().__init__(*layers)

    def proba(self, features):
        return softmax(self.forward(features))


def cross_entropy(logits, labels):
    """Mean per-frame cross-entropy and its gradient w.r.t. the logits."""
    labels = np.asarray(labels)
    T = len(labels)
    lp = log_softmax(logits)
    loss = -lp[np.arange(T), labels].mean()
    g = np.exp(lp)
    g[np.arange(T), labels] -= 1.0
    return float(loss), g / T


class SegmentationModel:
    """Encoder plus segmentation head."""

    def __init__(self, encoder: Encoder, head: SegmentationHead):
        self.encoder, self.head = encoder, head

    @classmethod
    def create(cls, joints, dims, classes, temporal, seed=0):
        rng = np.random.default_rng(seed)
        enc = Encoder(joints, dims, rng=rng)
        return cls(enc, SegmentationHead(enc.out_dim, classes, temporal, rng=rng))

    @property
    def classes(self):
        return self.head.classes

    def logits(self, frames):
        return self.head.forward(self.encoder.forward(frames))

    def proba(self, frames):
        return softmax(self.logits(frames))

    def loss_and_backward(self, frames, labels, train_encoder=True):
        """Forward, cross-entropy, backward; accumulates gradients. Returns the loss."""
        loss, g = cross_entropy(self.logits(frames), labels)
        gf = self.head.backward(g)
        if train_encoder:
            self.encoder.backward(gf)
        return loss

    def named_parameters(self):
        yield from self.encoder.named_parameters("encoder.")
        yield from self.head.named_parameters("head.")

    def zero_grad(self):
        self.encoder.zero_grad()
        self.head.zero_grad()


class SGD:
    """SGD with momentum and L2 weight decay; state is one velocity per parameter."""

    def __init__(self, params, lr=0.01, momentum=0.9, weight_decay=0.0):
        self.params = [(name, p, g) for name, p, g in params]
        self.lr, self.momentum, self.weight_decay = lr, momentum, weight_decay
        self.velocity = {name: np.zeros_like(p) for name, p, _ in self.params}

    def step(self):
        for name, p, g in self.params:
            d = g + self.weight_decay * p if self.weight_decay else g
            v = self.velocity[name]
            v *= self.momentum
            v -= self.lr * d
            p += v


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, tensors, meta=None):
    """Versioned text checkpoint: ``meta`` key/value lines then named tensors."""
    lines = ["SKM 1"]
    for k, v in (meta or {}).items():
        lines.append(f"meta {k} {v}")
    for name, arr in tensors:
        arr = np.asarray(arr)
        lines.append(f"tensor {name} {arr.ndim} " + " ".join(map(str, arr.shape)))
        lines.append(" ".join(fmt_float(x) for x in arr.ravel()))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path):
    meta, tensors = {}, OrderedDict()
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "SKM 1":
        raise FormatError("expected header 'SKM 1'", str(path), 1)
    n = 1
    while n < len(lines):
        toks = lines[n].split()
        if not toks:
            n += 1
            continue
        if toks[0] == "meta" and len(toks) >= 3:
            meta[toks[1]] = " ".join(toks[2:])
            n += 1
        elif toks[0] == "tensor":
            try:
                name, ndim = toks[1], int(toks[2])
                shape = tuple(int(s) for s in toks[3:3 + ndim])
                vals = np.array([float(x) for x in lines[n + 1].split()]) if n + 1 < len(lines) else None
            except (ValueError, IndexError):
                raise FormatError("bad tensor record", str(path), n + 1) from None
            if vals is None or vals.size != int(np.prod(shape)):
                raise FormatError(f"tensor {name} needs {int(np.prod(shape))} values", str(path), n + 2)
            tensors[name] = vals.reshape(shape)
            n += 2
        else:
            raise FormatError(f"unexpected record {toks[0]!r}", str(path), n + 1)
    return meta, tensors


def assign_parameters(named, tensors, prefix_filter=None):
    for name, p, _ in named:
        if prefix_filter and not name.startswith(prefix_filter):
            continue
        if name not in tensors:
            raise FormatError(f"checkpoint is missing tensor {name}")
        if tensors[name].shape != p.shape:
            raise FormatError(f"tensor {name}: shape {tensors[name].shape} != {p.shape}")
        p[...] = tensors[name]


def _encoder_tensors(enc: Encoder):
    return list(enc.named_buffers()) + [(n, p) for n, p, _ in enc.named_parameters("encoder.")]


def _load_encoder_tensors(enc: Encoder, tensors):
    for name, buf in enc.named_buffers():
        if name not in tensors or tensors[name].shape != buf.shape:
            raise FormatError(f"checkpoint is missing buffer {name}")
        buf[...] = tensors[name]
    assign_parameters(enc.named_parameters("encoder."), tensors)


def save_encoder(path, enc: Encoder, extra_meta=None):
    meta = {"kind": "encoder", "joints": enc.joints, "dims": enc.dims}
    meta.update(extra_meta or {})
    save_checkpoint(path, _encoder_tensors(enc), meta)


def load_encoder(path) -> Encoder:
    meta, tensors = load_checkpoint(path)
    if meta.get("kind") not in ("encoder", "segmentation"):
        raise FormatError("not an encoder checkpoint", str(path))
    enc = Encoder(int(meta["joints"]), int(meta["dims"]))
    _load_encoder_tensors(enc, tensors)
    return enc


def save_model(path, model: SegmentationModel, extra_meta=None):
    meta = {"kind": "segmentation", "joints": model.encoder.joints, "dims": model.encoder.dims,
            "classes": model.classes, "temporal": int(model.head.temporal)}
    meta.update(extra_meta or {})
    tensors = _encoder_tensors(model.encoder) + [(n, p) for n, p, _ in model.head.named_parameters("head.")]
    save_checkpoint(path, tensors, meta)


def load_model(path) -> SegmentationModel:
    meta, tensors = load_checkpoint(path)
    if meta.get("kind") != "segmentation":
        raise FormatError("not a segmentation model checkpoint", str(path))
    model = SegmentationModel.create(int(meta["joints"]), int(meta["dims"]), int(meta["classes"]),
                                     bool(int(meta["temporal"])))
    _load_encoder_tensors(model.encoder, tensors)
    assign_parameters(model.head.named_parameters("head."), tensors)
    return model


def parameter_digest(named) -> str:
    h = hashlib.sha256()
    for name, p, _ in named:
        h.update(name.encode())
        h.update(np.ascontiguousarray(p).tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# finite-difference checking


def rel_error(analytic, numeric):
    """Norm-wise relative error |a - n| / max(|a| + |n|, 1e-12)."""
    a, n = np.ravel(analytic), np.ravel(numeric)
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a) + np.linalg.norm(n), 1e-12))


def numeric_grad(f, x, h=1e-5, coords=None):
    """Central differences of scalar ``f()`` w.r.t. array ``x`` (perturbed in place).

    ``coords`` restricts to a subset of flat indices; other entries are NaN.
    """
    flat = x.reshape(-1)
    out = np.full(flat.shape, np.nan)
    for i in (range(flat.size) if coords is None else coords):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        out[i] = (fp - fm) / (2 * h)
    return out.reshape(x.shape)


def check_module(module, x, rng, h=1e-5, max_coords=None):
    """Compare analytic input and parameter gradients of ``sum(w * module(x))``."""
    x = np.array(x, dtype=np.float64)
    w = rng.standard_normal(np.shape(module.forward(x)))

    def f():
        return float(np.sum(w * module.forward(x)))

    module.zero_grad()
    module.forward(x)
    gx = module.backward(w)
    errors = {"input": _compare(gx, x, f, h, max_coords, rng)}
    for name, p, g in list(module.named_parameters()):
        errors[name] = _compare(g.copy(), p, f, h, max_coords, rng)
    return errors


def _compare(analytic, x, f, h, max_coords, rng):
    coords = None
    if max_coords is not None and x.size > max_coords:
        coords = np.sort(rng.choice(x.size, max_coords, replace=False))
    num = numeric_grad(f, x, h, coords)
    a = np.ravel(analytic)
    sel = np.arange(a.size) if coords is None else coords
    return rel_error(a[sel], np.ravel(num)[sel])
