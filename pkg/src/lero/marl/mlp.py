"""Feed-forward networks with hand-written reverse mode, plus Adam."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np


class ShapeMismatch(ValueError):
    pass


class Mlp:
    """Affine layers with ReLU between them and an identity output.

    All weights and biases live in one flat float64 vector ``params``;
    ``layers`` holds (W, b) views into it, so in-place updates of ``params``
    are seen by the forward pass and vice versa.
    """

    def __init__(
        self,
        sizes: Sequence[int],
        rng: np.random.Generator | None = None,
        params: np.ndarray | None = None,
    ):
        if len(sizes) < 2:
            raise ValueError("an Mlp needs at least an input and an output size")
        self.sizes = [int(s) for s in sizes]
        n = self.param_count(self.sizes)
        if params is None:
            params = np.zeros(n)
            self.params = params
            self._bind()
            if rng is not None:
                self.init(rng)
        else:
            params = np.asarray(params, dtype=float)
            if params.shape != (n,):
                raise ShapeMismatch(f"expected {n} parameters, got {params.shape}")
            self.params = params.copy()
            self._bind()

    @staticmethod
    def param_count(sizes: Sequence[int]) -> int:
        return sum((a + 1) * b for a, b in zip(sizes[:-1], sizes[1:]))

    def _bind(self) -> None:
        self.layers = []
        off = 0
        for a, b in zip(self.sizes[:-1], self.sizes[1:]):
            W = self.params[off : off + a * b].reshape(a, b)
            off += a * b
            bias = self.params[off : off + b]
            off += b
            self.layers.append((W, bias))

    def init(self, rng: np.random.Generator) -> None:
        last = len(self.layers) - 1
        for k, (W, b) in enumerate(self.layers):
            fan_in = W.shape[0]
            scale = np.sqrt(2.0 / fan_in) if k < last else np.sqrt(1.0 / fan_in)
            W[...] = rng.normal(0.0, scale, W.shape)
            b[...] = 0.0

    def copy(self) -> "Mlp":
        return Mlp(self.sizes, params=self.params)

    def load(self, other: "Mlp") -> None:
        self.params[...] = other.params

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.forward_cache(x)[0]

    def forward_cache(self, x: np.ndarray) -> tuple[np.ndarray, list]:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        h = x[None, :] if single else x
        if h.shape[-1] != self.sizes[0]:
            raise ShapeMismatch(f"input width {h.shape[-1]} != {self.sizes[0]}")
        cache = [single]
        last = len(self.layers) - 1
        for k, (W, b) in enumerate(self.layers):
            z = h @ W + b
            cache.append((h, z))
            h = np.maximum(z, 0.0) if k < last else z
        return (h[0] if single else h), cache

    def backward(self, cache: list, grad_out: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Gradient of a scalar loss w.r.t. ``params`` and the input, given dL/d(output)."""
        single = cache[0]
        g = np.asarray(grad_out, dtype=float)
        if single:
            g = g[None, :]
        grads = np.zeros_like(self.params)
        views = []
        off = 0
        for a, b in zip(self.sizes[:-1], self.sizes[1:]):
            views.append((grads[off : off + a * b].reshape(a, b), grads[off + a * b : off + a * b + b]))
            off += a * b + b
        last = len(self.layers) - 1
        for k in range(last, -1, -1):
            h, z = cache[k + 1]
            if k < last:
                # subgradient 0 at z == 0
                g = g * (z > 0.0)
            gW, gb = views[k]
            gW[...] = h.T @ g
            gb[...] = g.sum(axis=0)
            g = g @ self.layers[k][0].T
        return grads, (g[0] if single else g)


def mlp_forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    return net.forward(x)


def mlp_gradients(
    net: Mlp, loss_fn: Callable[[np.ndarray], tuple[float, np.ndarray]], x: np.ndarray
) -> np.ndarray:
    """Exact parameter gradient of ``loss_fn(net(x))``.

    ``loss_fn`` maps the network output to ``(loss, dloss/doutput)``.
    """
    out, cache = net.forward_cache(x)
    _, g = loss_fn(out)
    return net.backward(cache, g)[0]


def clip_by_global_norm(grads: Sequence[np.ndarray], max_norm: float) -> float:
    total = float(np.sqrt(sum(float(np.dot(g, g)) for g in grads)))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads:
            g *= scale
    return total


class Adam:
    def __init__(
        self,
        params: Sequence[np.ndarray],
        lr: float = 5e-4,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def save_snapshot(directory: str | Path, nets: Mapping[str, Mlp]) -> Path:
    """Flat little-endian float64 arrays plus a JSON shape manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {}
    for name, net in sorted(nets.items()):
        fname = f"{name}.bin"
        (directory / fname).write_bytes(net.params.astype("<f8").tobytes())
        manifest[name] = {"file": fname, "sizes": net.sizes, "dtype": "<f8", "count": int(net.params.size)}
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_snapshot(directory: str | Path) -> dict[str, Mlp]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    nets = {}
    for name, entry in manifest.items():
        flat = np.frombuffer((directory / entry["file"]).read_bytes(), dtype=entry["dtype"])
        if flat.size != entry["count"]:
            raise ShapeMismatch(f"{name}: expected {entry['count']} values, found {flat.size}")
        nets[name] = Mlp(entry["sizes"], params=flat.astype(float))
    return nets
