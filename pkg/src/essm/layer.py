"""Trainable multi-head eSSM layer and deep stack (forward passes and parameter accounting)."""

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg, special

from ._validation import as_matrix, check_positive_int, check_sequences
from .conv_engine import (
    ProjectedInput,
    bidirectional_kernel,
    conv_direct,
    conv_fft,
    conv_fft_real,
    project_input,
    system_kernel,
)
from .exceptions import InvalidHeadCountError, InvalidShapeError, InvalidWidthError
from .spectral_init import DELTA_RANGE, init_bundle
from .ssm_core import DiagonalSystem, apply_feedthrough, discretize_zoh, recurrent_scan_diagonal

STABILITY_FLOOR = 1e-3
NORM_EPS = 1e-5
KERNEL_MODES = ("real", "complex")
NORM_KINDS = ("batch", "layer", "none")


@dataclass(frozen=True)
class StabilizedSpectrum:
    raw_real: np.ndarray
    imag: np.ndarray
    floor: float = STABILITY_FLOOR


def enforce_stability(spectrum):
    """``-max(raw_real, floor) + 1j * imag``: every real part is at most ``-floor``."""
    raw = np.asarray(spectrum.raw_real, dtype=float)
    imag = np.asarray(spectrum.imag, dtype=float)
    return -np.maximum(raw, spectrum.floor) + 1j * imag


@dataclass
class MultiHeadLayer:
    """``s`` parallel diagonal heads followed by a dense mixer and gated activation.

    Per-head tensors carry a leading head axis: ``raw_real``, ``imag`` and
    ``delta`` are ``(s, N/s)``, ``b`` is ``(s, N/s, H/s)``, ``c`` is
    ``(s, M/s, N/s)`` and ``d`` is ``(s, min(M, H)/s)``.
    """

    raw_real: np.ndarray
    imag: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    delta: np.ndarray
    mixer_w: np.ndarray
    mixer_b: np.ndarray
    gate_w: np.ndarray
    bidirectional: bool = False
    kernel_mode: str = "real"
    floor: float = STABILITY_FLOOR
    norm: str = "batch"
    norm_placement: str = "post"
    residual: bool = True

    PARAM_NAMES = ("raw_real", "imag", "b", "c", "d", "delta", "mixer_w", "mixer_b", "gate_w")

    def __post_init__(self):
        for name in self.PARAM_NAMES:
            setattr(self, name, np.array(getattr(self, name), dtype=float))
        s, n = self.raw_real.shape
        _, m, _ = self.c.shape
        h = self.b.shape[2]
        expected = {
            "imag": (s, n),
            "b": (s, n, h),
            "c": (s, m, n),
            "d": (s, min(m, h)),
            "delta": (s, n),
            "mixer_w": (s * m, s * m),
            "mixer_b": (s * m,),
            "gate_w": (s * m, s * m),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise InvalidShapeError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if np.any(self.delta <= 0):
            raise ValueError("delta must be strictly positive")
        if self.kernel_mode not in KERNEL_MODES:
            raise ValueError(f"kernel_mode must be one of {KERNEL_MODES}")
        if self.norm not in NORM_KINDS:
            raise ValueError(f"norm must be one of {NORM_KINDS}")
        if self.norm_placement not in ("pre", "post"):
            raise ValueError("norm_placement must be 'pre' or 'post'")

    @property
    def n_heads(self):
        return self.raw_real.shape[0]

    @property
    def sizes(self):
        """``(H, N, M)`` of the composite layer."""
        s, n, h = self.b.shape
        return s * h, s * n, s * self.c.shape[1]

    @property
    def lam(self):
        return enforce_stability(StabilizedSpectrum(self.raw_real, self.imag, self.floor))

    @property
    def heads(self):
        lam = self.lam
        return [
            DiagonalSystem(lam=lam[i], b=self.b[i], c=self.c[i], d=self.d[i], delta=self.delta[i])
            for i in range(self.n_heads)
        ]

    def params(self):
        return {name: getattr(self, name) for name in self.PARAM_NAMES}

    def with_params(self, **params):
        return replace(self, **params)

    def copy(self):
        return replace(self, **{k: v.copy() for k, v in self.params().items()})

    def scale_delta(self, factor):
        """Return a copy with every step size multiplied by ``factor``."""
        return replace(self, delta=self.delta * factor)

    @classmethod
    def from_systems(cls, systems, mixer_w=None, mixer_b=None, gate_w=None, **config):
        """Build a layer from equally sized diagonal heads."""
        systems = list(systems)
        lam = np.stack([sys.lam for sys in systems])
        m = systems[0].c.shape[0]
        width = m * len(systems)
        return cls(
            raw_real=-lam.real,
            imag=lam.imag,
            b=np.stack([sys.b for sys in systems]),
            c=np.stack([sys.c for sys in systems]),
            d=np.stack([sys.d for sys in systems]),
            delta=np.stack([sys.delta for sys in systems]),
            mixer_w=np.eye(width) if mixer_w is None else mixer_w,
            mixer_b=np.zeros(width) if mixer_b is None else mixer_b,
            gate_w=np.zeros((width, width)) if gate_w is None else gate_w,
            **config,
        )


def check_heads(h, n, m, s):
    s = check_positive_int(s, "s")
    for name, size in (("H", h), ("N", n), ("M", m)):
        check_positive_int(size, name)
        if size % s:
            raise InvalidHeadCountError(f"head count {s} does not divide {name}={size}")
    return s


def init_multi_head_layer(
    h,
    n,
    m=None,
    s=1,
    seed=0,
    bidirectional=False,
    kernel_mode="real",
    delta_range=DELTA_RANGE,
    **config,
):
    """HiPPO-initialized layer; every head gets its own HiPPO spectrum of size ``N/s``."""
    m = h if m is None else m
    s = check_heads(h, n, m, s)
    bundles = [
        init_bundle(n // s, h // s, m // s, seed=seed + 7919 * i, delta_range=delta_range)
        for i in range(s)
    ]
    rng = np.random.default_rng(seed + 104729)
    scale = 1.0 / np.sqrt(m)
    lam = np.stack([bd.lambda_init for bd in bundles])
    return MultiHeadLayer(
        raw_real=-lam.real,
        imag=lam.imag,
        b=np.stack([bd.b_init for bd in bundles]),
        c=np.stack([bd.c_init for bd in bundles]),
        d=np.stack([bd.d_init for bd in bundles]),
        delta=np.stack([bd.delta_init for bd in bundles]),
        mixer_w=rng.normal(0.0, scale, size=(m, m)),
        mixer_b=np.zeros(m),
        gate_w=rng.normal(0.0, scale, size=(m, m)),
        bidirectional=bidirectional,
        kernel_mode=kernel_mode,
        **config,
    )


def head_forward(sys, u, bidirectional=False, kernel_mode="real", engine="fft"):
    """Output sequence of one diagonal head under ZOH.

    ``engine`` selects how states are inferred: ``"fft"``, ``"direct"`` or
    ``"recurrent"`` (causal, complex kernel only).
    """
    _, h, m = sys.sizes
    u = as_matrix(u, "u", shape=(None, h))
    disc = discretize_zoh(sys.lam, sys.b, sys.delta)
    if engine == "recurrent":
        if bidirectional or kernel_mode != "complex":
            raise ValueError("the recurrent engine needs a causal complex kernel")
        return recurrent_scan_diagonal(disc, sys.c, sys.d, u).outputs
    real = kernel_mode == "real"
    kernel = system_kernel(disc.lambda_bar, u.shape[0], real=real)
    if bidirectional:
        kernel = bidirectional_kernel(kernel)
    if engine == "fft" and real:
        # a real kernel only needs the real part of the projected input
        pin = ProjectedInput((np.ascontiguousarray(disc.b_bar.real) @ u.T).T)
        x = conv_fft_real(kernel, pin)
    elif engine == "fft":
        x = conv_fft(kernel, project_input(disc.b_bar, u))
    elif engine == "direct":
        x = conv_direct(kernel, project_input(disc.b_bar, u))
    else:
        raise ValueError(f"unknown engine {engine!r}")
    return apply_feedthrough(sys.d, u, m, out=np.real(x) @ sys.c.T)


def ssm_forward(layer, u, engine="fft"):
    """Concatenated head outputs before the mixer."""
    hh, _, _ = layer.sizes
    u = as_matrix(u, "u", shape=(None, hh))
    s = layer.n_heads
    h = hh // s
    outs = [
        head_forward(sys, u[:, i * h : (i + 1) * h], layer.bidirectional, layer.kernel_mode, engine)
        for i, sys in enumerate(layer.heads)
    ]
    return np.concatenate(outs, axis=1)


def multi_head_forward(layer, u, engine="fft"):
    """Split features into heads, run each head, concatenate and mix: ``W y + b``."""
    u = np.asarray(u, dtype=float)
    hh = layer.sizes[0]
    if u.ndim != 2 or u.shape[1] % layer.n_heads:
        raise InvalidHeadCountError(f"{layer.n_heads} heads cannot split input of shape {u.shape}")
    if u.shape[1] != hh:
        raise InvalidShapeError(f"input width {u.shape[1]} does not match layer width {hh}")
    y = ssm_forward(layer, u, engine)
    return y @ layer.mixer_w.T + layer.mixer_b


def gelu(x):
    return 0.5 * x * (1.0 + special.erf(x / np.sqrt(2.0)))


def gelu_grad(x):
    return 0.5 * (1.0 + special.erf(x / np.sqrt(2.0))) + x * np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)


def sigmoid(x):
    return special.expit(x)


def gated_activation(y, gate_w):
    """``GELU(y) * sigmoid(W GELU(y))`` applied per step."""
    g = gelu(np.asarray(y, dtype=float))
    return g * sigmoid(g @ np.asarray(gate_w).T)


def normalize(x, kind="batch", eps=NORM_EPS):
    """Batch norm uses statistics over every axis but the last, layer norm over features.

    For a batch ``(B, L, H)`` batch statistics pool sequences and time steps.
    """
    if kind == "none":
        return x
    axis = tuple(range(x.ndim - 1)) if kind == "batch" else -1
    mu = x.mean(axis=axis, keepdims=True)
    var = x.var(axis=axis, keepdims=True)
    return (x - mu) / np.sqrt(var + eps)


def layer_forward(layer, u, engine="fft"):
    """Residual block ``norm(u + act(mixer(ssm(u))))``; pre-norm normalizes the input instead.

    ``u`` is one sequence ``(L, H)`` or a batch ``(B, L, H)``; a batch shares
    its normalization statistics.
    """
    u = np.asarray(u, dtype=float)
    hh, _, mm = layer.sizes
    if layer.residual and hh != mm:
        raise InvalidWidthError(f"residual connection needs M == H, got M={mm}, H={hh}")
    inner = normalize(u, layer.norm) if layer.norm_placement == "pre" else u
    if inner.ndim == 3:
        mixed = np.stack([multi_head_forward(layer, x, engine) for x in inner])
    else:
        mixed = multi_head_forward(layer, inner, engine)
    out = gated_activation(mixed, layer.gate_w)
    if layer.residual:
        out = u + out
    if layer.norm_placement == "post":
        out = normalize(out, layer.norm)
    return out


@dataclass
class DeepModel:
    encoder: np.ndarray
    layers: list = field(default_factory=list)
    decoder: np.ndarray = None


def init_deep_model(h_in, h, n, classes, depth=1, s=1, seed=0, **layer_config):
    rng = np.random.default_rng(seed)
    layers = [
        init_multi_head_layer(h, n, h, s, seed=seed + 31 * (i + 1), **layer_config)
        for i in range(depth)
    ]
    return DeepModel(
        encoder=rng.normal(0.0, 1.0 / np.sqrt(h_in), size=(h, h_in)),
        layers=layers,
        decoder=rng.normal(0.0, 1.0 / np.sqrt(h), size=(classes, h)),
    )


def deep_forward(model, u, engine="fft"):
    """Encoder, stacked layers, mean pooling over time and decoder; returns class scores.

    ``u`` is ``(L, H_in)`` (scores ``(classes,)``) or a batch ``(B, L, H_in)``
    (scores ``(B, classes)``). With post batch normalization the pooled
    features of a lone sequence are zero by construction, so classify batches.
    """
    x, single = check_sequences(u, "u")
    if x.shape[2] != model.encoder.shape[1]:
        raise InvalidShapeError(f"expected {model.encoder.shape[1]} input features, got {x.shape[2]}")
    x = x @ model.encoder.T
    for layer in model.layers:
        x = layer_forward(layer, x, engine)
    scores = x.mean(axis=1) @ model.decoder.T
    return scores[0] if single else scores


def block_diagonal_system(layer):
    """The direct sum of the layer's heads as one monolithic diagonal system."""
    heads = layer.heads
    d = linalg.block_diag(*[_dense_d(sys) for sys in heads])
    return DiagonalSystem(
        lam=np.concatenate([sys.lam for sys in heads]),
        b=linalg.block_diag(*[sys.b for sys in heads]),
        c=linalg.block_diag(*[sys.c for sys in heads]),
        d=d,
        delta=np.concatenate([sys.delta for sys in heads]),
    )


def _dense_d(sys):
    _, h, m = sys.sizes
    return apply_feedthrough(sys.d, np.eye(h), m).T


def count_params(h, n, m=None, s=1, bidirectional=False):
    """Trainable parameter breakdown of one multi-head layer.

    The bidirectional kernel reuses the forward parameters, so the flag does
    not change any count.
    """
    m = h if m is None else m
    s = check_heads(h, n, m, s)
    nh, hh, mh = n // s, h // s, m // s
    counts = {
        "lambda": s * 2 * nh,
        "b": s * nh * hh,
        "c": s * mh * nh,
        "d": s * min(mh, hh),
        "delta": s * nh,
    }
    counts["ssm"] = sum(counts.values())
    counts["mixer"] = m * m + m
    counts["gate"] = m * m
    counts["total"] = counts["ssm"] + counts["mixer"] + counts["gate"]
    return counts
