"""Central finite-difference helpers used by the gradient tests."""
from __future__ import annotations

import numpy as np

from handrecon.nn import layers as L
from handrecon.nn.tensor import Tensor


def numeric_grad(fn, arrays: list[np.ndarray], which: int, step: float = 1e-3) -> np.ndarray:
    base = arrays[which]
    grad = np.zeros_like(base)
    it = np.nditer(base, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = base[idx]
        base[idx] = orig + step
        fp = fn(*[Tensor(a) for a in arrays]).item()
        base[idx] = orig - step
        fm = fn(*[Tensor(a) for a in arrays]).item()
        base[idx] = orig
        grad[idx] = (fp - fm) / (2 * step)
    return grad


def analytic_grads(fn, arrays: list[np.ndarray]) -> list[np.ndarray]:
    ts = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    fn(*ts).backward()
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in ts]


def max_relative_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.abs(a).max(), np.abs(b).max(), 1e-8)
    return float(np.abs(a - b).max() / scale)


def check(fn, arrays: list[np.ndarray], step: float = 1e-3) -> list[float]:
    """Relative errors (one per input) between backprop and central differences."""
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    ana = analytic_grads(fn, arrays)
    return [max_relative_error(ana[i], numeric_grad(fn, arrays, i, step)) for i in range(len(arrays))]


def _layer_loss(spec, params_names, out_weights):
    def fn(x, *ps):
        out = L.forward(spec, x, dict(zip(params_names, ps)))
        return (out * Tensor(out_weights)).sum()
    return fn


LAYER_CASES = [
    (L.conv3d(2, 3, 3, 1, 1), (1, 2, 4, 4, 4)),
    (L.conv3d(2, 2, 2, 2, 0), (1, 2, 4, 4, 4)),
    (L.upconv3d(2, 2, 2, 2, 0), (1, 2, 2, 2, 2)),
    (L.upconv3d(2, 2, 3, 1, 1), (1, 2, 3, 3, 3)),
    (L.conv2d(3, 4, 3, 2, 1), (2, 3, 6, 6)),
    (L.linear(5, 3), (4, 5)),
    (L.relu(), (2, 3, 4)),
    (L.group_norm(8, 4), (2, 8, 3, 3, 3)),
    (L.softmax(), (3, 6, 2, 2, 2)),
]


def layer_errors(spec: L.LayerSpec, shape: tuple[int, ...], seed: int = 3) -> list[float]:
    """Relative gradient errors for a layer's input and every parameter under a random linear readout."""
    rng = np.random.default_rng(seed)
    params = L.init_params(spec, rng, dtype=np.float64)
    names = sorted(params)
    arrays = [rng.normal(size=shape)]
    if spec.kind == "relu":
        # keep away from the kink
        arrays[0] = np.sign(arrays[0]) * (np.abs(arrays[0]) + 0.1)
    for n in names:
        arrays.append(params[n].data + 0.1 * rng.normal(size=params[n].shape))
    out_shape = L.forward(spec, Tensor(arrays[0]), {n: Tensor(a) for n, a in zip(names, arrays[1:])}).shape
    return check(_layer_loss(spec, names, rng.normal(size=out_shape)), arrays)
