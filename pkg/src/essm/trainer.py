"""Mean-squared-error training of eSSM layers with hand-derived gradients.

The backward pass runs the convolution adjoint (a correlation, evaluated with
FFTs) instead of differentiating FFT butterflies. Complex quantities follow
the convention ``G = dL/dRe + 1j * dL/dIm``, so for a holomorphic ``w = f(z)``
the chain rule reads ``G_z = conj(f'(z)) * G_w``.
"""

from dataclasses import dataclass, fields

import numpy as np

from ._validation import check_sequences
from .exceptions import InvalidShapeError, NumericFailureError, TrainingDivergedError
from .layer import (
    MultiHeadLayer,
    gelu,
    gelu_grad,
    head_forward,
    layer_forward,
    multi_head_forward,
    normalize,
    sigmoid,
    NORM_EPS,
)
from .ssm_core import SMALL_LAMBDA, zoh_coefficients

OUTPUTS = ("layer", "mixer")
MIN_DELTA = 1e-4


@dataclass
class GradBundle:
    d_raw_real: np.ndarray
    d_imag: np.ndarray
    d_b: np.ndarray
    d_c: np.ndarray
    d_d: np.ndarray
    d_delta: np.ndarray
    d_mixer_w: np.ndarray
    d_mixer_b: np.ndarray
    d_gate_w: np.ndarray

    def as_dict(self):
        """Gradients keyed by the parameter names of :class:`MultiHeadLayer`."""
        return {f.name[2:]: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_mapping(cls, grads):
        return cls(**{f"d_{k}": np.asarray(v) for k, v in grads.items()})


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 500
    learning_rate: float = 0.01
    seed: int = 0
    fd_epsilon: float = 1e-5
    length: int = 128
    batch: int = 4

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")


@dataclass(frozen=True)
class FitResult:
    losses: np.ndarray
    layer: MultiHeadLayer


def mse_loss(pred, target):
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise InvalidShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    return float(np.mean((pred - target) ** 2))


def forward(layer, u, output="layer"):
    """Reference forward pass used for losses and finite differences."""
    if output == "layer":
        return layer_forward(layer, u)
    if output == "mixer":
        return multi_head_forward(layer, u)
    raise ValueError(f"output must be one of {OUTPUTS}")


def batch_loss(layer, inputs, targets, output="layer"):
    inputs, _ = check_sequences(inputs, "inputs")
    targets, _ = check_sequences(targets, "targets")
    return float(np.mean([mse_loss(forward(layer, u, output), t) for u, t in zip(inputs, targets)]))


def finite_diff_grad(loss_fn, params, epsilon=1e-5):
    """Central differences of ``loss_fn(params)`` for every scalar in ``params``.

    ``params`` maps names to arrays (or scalars); the result has the same keys
    and shapes.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    work = {k: np.array(v, dtype=float) for k, v in params.items()}
    grads = {}
    for name, arr in work.items():
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            plus = loss_fn(work)
            flat[i] = orig - epsilon
            minus = loss_fn(work)
            flat[i] = orig
            gflat[i] = (plus - minus) / (2.0 * epsilon)
        grads[name] = g
    return grads


def layer_finite_diff_grad(layer, inputs, targets, epsilon=1e-5, output="layer"):
    def loss_fn(params):
        return batch_loss(layer.with_params(**params), inputs, targets, output)

    return GradBundle.from_mapping(finite_diff_grad(loss_fn, layer.params(), epsilon))


def _conv(a, b):
    """First ``L`` samples of the causal convolution of the columns of ``a`` and ``b``."""
    length = a.shape[0]
    n = 1 << max(2 * length - 2, 0).bit_length()
    return np.fft.ifft(np.fft.fft(a, n, axis=0) * np.fft.fft(b, n, axis=0), axis=0)[:length]


def _norm_backward(g_out, x, kind):
    if kind == "none":
        return g_out
    axis = 0 if kind == "batch" else 1
    count = x.shape[axis]
    mu = x.mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(x.var(axis=axis, keepdims=True) + NORM_EPS)
    xhat = (x - mu) * inv
    return inv * (
        g_out
        - g_out.mean(axis=axis, keepdims=True)
        - xhat * (g_out * xhat).sum(axis=axis, keepdims=True) / count
    )


def _sequence_grad(layer, u, target, output, scale):
    """Loss and gradients for a single sequence; ``scale`` is the loss normalizer."""
    s, n = layer.raw_real.shape
    h = layer.b.shape[2]
    m = layer.c.shape[1]
    dm = layer.d.shape[1]
    length = u.shape[0]
    real_kernel = layer.kernel_mode == "real"

    # forward
    pre_norm = output == "layer" and layer.norm_placement == "pre"
    u_in = normalize(u, layer.norm) if pre_norm else u
    lam = layer.lam
    delta = layer.delta
    z = lam * delta
    coef = zoh_coefficients(lam, delta)
    b_bar = coef[..., None] * layer.b
    us = u_in.reshape(length, s, h)
    bu = np.einsum("snh,lsh->lsn", b_bar, us).reshape(length, s * n)
    steps = np.arange(length)[:, None]
    v = np.exp(steps * z.reshape(1, s * n))
    vk = v.real.astype(complex) if real_kernel else v
    x = _conv(vk, bu)
    if layer.bidirectional:
        x = x + _conv(vk, bu[::-1])[::-1]
    xs = x.reshape(length, s, n)
    yh = np.einsum("smn,lsn->lsm", layer.c, xs.real)
    yh[:, :, :dm] += us[:, :, :dm] * layer.d
    y = yh.reshape(length, s * m)
    mixed = y @ layer.mixer_w.T + layer.mixer_b

    grads = {}
    if output == "mixer":
        out = mixed
        g_mixed = None
    else:
        g = gelu(mixed)
        sg = sigmoid(g @ layer.gate_w.T)
        act = g * sg
        pre = u + act if layer.residual else act
        out = normalize(pre, layer.norm) if layer.norm_placement == "post" else pre
    if not np.all(np.isfinite(out)):
        raise NumericFailureError("non-finite activations in forward pass")
    diff = out - target
    loss = float(np.sum(diff**2) / scale)
    g_out = 2.0 * diff / scale

    # backward
    if output == "mixer":
        g_mixed = g_out
        grads["gate_w"] = np.zeros_like(layer.gate_w)
    else:
        g_act = _norm_backward(g_out, pre, layer.norm) if layer.norm_placement == "post" else g_out
        gate_term = g_act * g * sg * (1.0 - sg)
        grads["gate_w"] = gate_term.T @ g
        g_g = g_act * sg + gate_term @ layer.gate_w
        g_mixed = g_g * gelu_grad(mixed)
    grads["mixer_w"] = g_mixed.T @ y
    grads["mixer_b"] = g_mixed.sum(axis=0)
    g_yh = (g_mixed @ layer.mixer_w).reshape(length, s, m)
    grads["c"] = np.einsum("lsm,lsn->smn", g_yh, xs.real)
    grads["d"] = np.einsum("lsk,lsk->sk", g_yh[:, :, :dm], us[:, :, :dm])
    g_x = np.einsum("lsm,smn->lsn", g_yh, layer.c).reshape(length, s * n).astype(complex)

    flip_gx = g_x[::-1]
    g_bu = _conv(vk.conj(), flip_gx)[::-1]
    g_v = _conv(bu.conj(), flip_gx)[::-1]
    if layer.bidirectional:
        g_bu = g_bu + _conv(vk.conj(), g_x)
        g_v = g_v + _conv(bu[::-1].conj(), g_x)[::-1]
    if real_kernel:
        g_v = g_v.real.astype(complex)

    g_bbar = np.einsum("lsn,lsh->snh", g_bu.reshape(length, s, n), us)
    grads["b"] = np.real(g_bbar * coef.conj()[..., None])
    g_coef = np.einsum("snh,snh->sn", g_bbar, layer.b)

    weighted = np.sum(steps * v.conj() * g_v, axis=0).reshape(s, n)
    small = np.abs(lam) < SMALL_LAMBDA
    safe = np.where(small, 1.0, lam)
    dcoef_dlam = np.where(small, 0.5 * delta**2, (delta * np.exp(z) - coef) / safe)
    dcoef_ddelta = np.where(small, 1.0, np.exp(z))
    g_lam = dcoef_dlam.conj() * g_coef + delta * weighted
    grads["delta"] = np.real(g_coef.conj() * dcoef_ddelta) + np.real(lam * weighted.conj())
    grads["raw_real"] = np.where(layer.raw_real > layer.floor, -g_lam.real, 0.0)
    grads["imag"] = g_lam.imag
    return loss, grads


def analytic_grad(layer, inputs, targets, output="layer"):
    """Loss averaged over sequences and its exact gradient for every trainable tensor.

    ``output="layer"`` differentiates the full residual block and
    ``output="mixer"`` stops after the mixer (the linear part of the layer).
    """
    if output not in OUTPUTS:
        raise ValueError(f"output must be one of {OUTPUTS}")
    inputs, _ = check_sequences(inputs, "inputs")
    targets, _ = check_sequences(targets, "targets")
    if inputs.shape[0] != targets.shape[0]:
        raise InvalidShapeError("inputs and targets hold different numbers of sequences")
    total = 0.0
    acc = {name: np.zeros_like(val) for name, val in layer.params().items()}
    count = inputs.shape[0]
    for u, t in zip(inputs, targets):
        if t.shape != (u.shape[0], layer.sizes[2]):
            raise InvalidShapeError(f"target shape {t.shape} does not match layer output")
        loss, grads = _sequence_grad(layer, u, t, output, t.size * count)
        total += loss
        for name in acc:
            acc[name] += grads[name]
    for name, val in acc.items():
        if not np.all(np.isfinite(val)):
            raise NumericFailureError(f"non-finite gradient for {name}")
    return total, GradBundle.from_mapping(acc)


def relative_errors(analytic, numeric, floor=1e-6):
    """Per-tensor ``max|a - f| / max(max|a|, max|f|, floor)``."""
    out = {}
    a_map, f_map = analytic.as_dict(), numeric.as_dict()
    for name, a in a_map.items():
        f = f_map[name]
        denom = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(f), initial=0.0), floor)
        out[name] = float(np.max(np.abs(a - f), initial=0.0) / denom)
    return out


def gradient_step(layer, grads, learning_rate):
    """Plain gradient descent; step sizes are kept positive."""
    params = {
        name: val - learning_rate * grads.as_dict()[name] for name, val in layer.params().items()
    }
    params["delta"] = np.maximum(params["delta"], MIN_DELTA)
    return layer.with_params(**params)


def train(layer, inputs, targets, steps, learning_rate, output="mixer"):
    """Full-batch gradient descent; returns the loss before each step and after the last one."""
    losses = []
    for _ in range(steps):
        loss, grads = analytic_grad(layer, inputs, targets, output)
        if not np.isfinite(loss) or loss > 1e6:
            raise TrainingDivergedError(f"loss reached {loss!r}")
        losses.append(loss)
        layer = gradient_step(layer, grads, learning_rate)
    final = batch_loss(layer, inputs, targets, output)
    if not np.isfinite(final) or final > 1e6:
        raise TrainingDivergedError(f"loss reached {final!r}")
    losses.append(final)
    return FitResult(losses=np.asarray(losses), layer=layer)


def teacher_outputs(teacher, inputs, like):
    return np.stack(
        [head_forward(teacher, u, like.bidirectional, like.kernel_mode) for u in inputs]
    )


def fit_system_id(teacher, student, cfg=TrainConfig()):
    """Fit ``student`` (mixer output) to a teacher head on random input sequences."""
    h = teacher.sizes[1]
    if student.sizes[0] != h or student.sizes[2] != teacher.sizes[2]:
        raise InvalidShapeError("student and teacher sizes differ")
    rng = np.random.default_rng(cfg.seed)
    inputs = rng.normal(size=(cfg.batch, cfg.length, h))
    targets = teacher_outputs(teacher, inputs, student)
    return train(student, inputs, targets, cfg.steps, cfg.learning_rate, output="mixer")
