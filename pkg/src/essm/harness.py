"""Reproducible experiments behind the ``essm`` command line: equivalence, convergence,
oracle sweeps, timing, parameter tables, gradient checks and the training demo.

Every runner takes a :class:`RunConfig` and returns a :class:`Report`; nothing
here prints or exits, so the runners are usable from tests and notebooks.
"""

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .conv_engine import (
    ProjectedInput,
    bidirectional_kernel,
    conv_direct,
    conv_fft,
    conv_fft_real,
    project_input,
    system_kernel,
)
from .layer import check_heads, count_params, head_forward, init_multi_head_layer
from .spectral_init import hippo_normal_matrix, init_bundle
from .ssm_core import (
    ContinuousFull,
    DiagonalSystem,
    diagonalize,
    discretize_full,
    discretize_zoh,
    recurrent_scan_diagonal,
    recurrent_scan_full,
)
from .trainer import (
    TrainConfig,
    analytic_grad,
    fit_system_id,
    layer_finite_diff_grad,
    relative_errors,
)

COMMANDS = (
    "toy-equivalence",
    "convergence",
    "oracle-sweep",
    "bench",
    "params",
    "train-demo",
    "gradcheck",
)
STRATEGIES = ("vanilla-recurrent-full", "diagonal-recurrent", "diagonal-fft")
EXTRA_STRATEGIES = ("diagonal-direct",)
DEFAULT_LENGTHS = (256, 512, 1024, 2048, 4096, 8192)

TOY_A = np.array([[-0.2, 1.0], [-1.0, -3.0]])
TOY_DELTA = 0.005
TOY_STEPS = 2000
TOY_TOL = 1e-8
TOY_CONV_TOL = 1e-10
CONVERGENCE_TOL = 0.01
CONVERGENCE_WINDOW = 100
NOISE_FLOOR = 1e-12
SWEEP_INSTANCES = 200
SWEEP_LENGTHS = (1, 2, 3, 8, 64, 257)
SWEEP_STATES = (1, 2, 5)
SWEEP_INPUTS = (1, 3)
SWEEP_FFT_TOL = 1e-9
SWEEP_STATE_TOL = 1e-8
MIN_REPS = 5
VANILLA_CAP = 1 << 20
ORDERING_SIZE = (1024, 64, 64)
FFT_RATIO_MAX = 6.0
DIRECT_RATIO_MIN = 10.0
RATIO_LENGTHS = (2048, 8192)
HEAD_COUNTS = (1, 4, 16, 64)
GRADCHECK_MAX_SIZE = 4
GRADCHECK_MAX_LENGTH = 16
GRADCHECK_TOL = 1e-4
GRADCHECK_INSTANCES = 3
TRAIN_RATIO = 0.1
TEACHER_SEED_OFFSET = 12345


class UsageError(ValueError):
    """Configuration rejected before any work is done (exit code 1 on the command line)."""


@dataclass(frozen=True)
class RunConfig:
    """Options shared by all commands; ``None`` means the command's own default."""

    command: str
    lengths: tuple = ()
    n: int | None = None
    h: int | None = None
    m: int | None = None
    heads: int = 1
    bidirectional: bool = False
    seed: int = 0
    output_path: str | None = None
    fmt: str = "csv"
    steps: int | None = None
    learning_rate: float | None = None
    reps: int = MIN_REPS
    strategies: tuple = ()

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise UsageError(f"unknown command {self.command!r}")
        if self.fmt not in ("csv", "json"):
            raise UsageError(f"format must be csv or json, got {self.fmt!r}")
        for name in ("n", "h", "m", "heads", "steps"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise UsageError(f"{name} must be positive, got {value}")
        if any(length < 1 for length in self.lengths):
            raise UsageError("lengths must be positive")
        if self.learning_rate is not None and self.learning_rate < 0:
            raise UsageError("learning rate must be non-negative")

    def sizes(self, n, h, m=None):
        """``(N, H, M)`` with the command defaults filled in."""
        n = self.n or n
        h = self.h or h
        m = self.m or (m if m is not None else h)
        return n, h, m

    @property
    def length(self):
        if len(self.lengths) > 1:
            raise UsageError(f"{self.command} takes a single --L")
        return self.lengths[0] if self.lengths else None


@dataclass
class Report:
    command: str
    columns: list
    records: list
    checks: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(ok for ok, _ in self.checks.values())

    @property
    def failures(self):
        return [name for name, (ok, _) in self.checks.items() if not ok]

    @property
    def summary(self):
        lines = [f"{self.command}: {'PASS' if self.passed else 'FAIL'}"]
        for name, (ok, detail) in self.checks.items():
            lines.append(f"  [{'ok' if ok else 'FAIL'}] {name}: {detail}")
        return "\n".join(lines)


def _meta(cfg, **sizes):
    from . import __version__

    return {"command": cfg.command, "seed": cfg.seed, "sizes": sizes, "version": __version__}


def _toy_system():
    eye = np.eye(2)
    return ContinuousFull(a=TOY_A, b=eye, c=eye, d=np.zeros((2, 2)))


def _toy_input(length):
    t = TOY_DELTA * np.arange(1, length + 1)
    return t, np.column_stack([np.sin(t), np.cos(2.0 * t)])


def run_toy_equivalence(cfg):
    """Simulate the 2-state toy system four ways and compare the outputs."""
    length = cfg.length or TOY_STEPS
    sys = _toy_system()
    t, u = _toy_input(length)
    y_rec = recurrent_scan_full(discretize_full(sys, TOY_DELTA), u).outputs
    diag = diagonalize(sys)
    disc = discretize_zoh(diag.lam, diag.b_prime, TOY_DELTA)
    y_diag = recurrent_scan_diagonal(disc, diag.c_prime, sys.d, u).outputs
    kernel = system_kernel(disc.lambda_bar, length)
    pin = project_input(disc.b_bar, u)
    y_conv = np.real(conv_direct(kernel, pin) @ diag.c_prime.T) + u @ sys.d.T
    y_fft = np.real(conv_fft(kernel, pin) @ diag.c_prime.T) + u @ sys.d.T

    outputs = {"rec": y_rec, "diag": y_diag, "conv": y_conv, "fft": y_fft}
    names = list(outputs)
    worst, pair = 0.0, None
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            dev = float(np.max(np.abs(outputs[a] - outputs[b])))
            if dev >= worst:
                worst, pair = dev, f"{a}/{b}"
    conv_dev = float(np.max(np.abs(y_conv - y_fft)))

    columns = ["step", "time"] + [f"y{j}_{name}" for name in names for j in (1, 2)]
    records = []
    for k in range(length):
        row = {"step": k + 1, "time": float(t[k])}
        for name in names:
            row[f"y1_{name}"] = float(outputs[name][k, 0])
            row[f"y2_{name}"] = float(outputs[name][k, 1])
        records.append({c: row[c] for c in columns})
    checks = {
        "max-pairwise-deviation": (worst <= TOY_TOL, f"{worst:.3e} ({pair}) <= {TOY_TOL:g}"),
        "conv-vs-fft": (conv_dev <= TOY_CONV_TOL, f"{conv_dev:.3e} <= {TOY_CONV_TOL:g}"),
    }
    return Report(cfg.command, columns, records, checks, _meta(cfg, L=length, N=2, H=2, M=2))


def biased_states(sys, u, x0, delta=TOY_DELTA):
    """States of the diagonal convolutional model started from ``x0``.

    The zero-state convolution is shifted by the free response
    ``T diag(lambda_bar)^k T^-1 x0``; row 0 is ``x0`` itself.
    """
    diag = diagonalize(sys)
    disc = discretize_zoh(diag.lam, diag.b_prime, delta)
    length = u.shape[0]
    kernel = system_kernel(disc.lambda_bar, length + 1)
    forced = conv_fft(system_kernel(disc.lambda_bar, length), project_input(disc.b_bar, u))
    z0 = np.linalg.solve(diag.t, np.asarray(x0, dtype=complex))
    z = kernel.v * z0
    z[1:] += forced
    return np.real(z @ diag.t.T)


def _window_maxima(err, window):
    count = err.shape[0] // window
    return err[: count * window].reshape(count, window).max(axis=1)


def run_convergence(cfg, x0=(1.0, 0.0), x0_hat=(0.0, 0.0)):
    """Track how fast a wrongly initialized model forgets its initial state."""
    length = cfg.length or TOY_STEPS
    sys = _toy_system()
    t, u = _toy_input(length)
    true = biased_states(sys, u, x0)
    guess = biased_states(sys, u, x0_hat)
    err = np.abs(true - guess)

    # the diagonal path with the true initial state must agree with the dense recurrence
    disc = discretize_full(sys, TOY_DELTA)
    ref = recurrent_scan_full(disc, u, x0=np.asarray(x0, dtype=float)).states
    ref_dev = float(np.max(np.abs(true[1:] - ref)))

    worst = err.max(axis=1)
    windows = _window_maxima(worst, CONVERGENCE_WINDOW)
    drops = [(a > b) or (a <= NOISE_FLOOR and b <= NOISE_FLOOR) for a, b in zip(windows, windows[1:])]
    final = float(worst[-1])
    final_time = TOY_DELTA * length

    columns = ["step", "time", "err_state1", "err_state2"]
    records = [
        {"step": k, "time": TOY_DELTA * k, "err_state1": float(err[k, 0]), "err_state2": float(err[k, 1])}
        for k in range(length + 1)
    ]
    checks = {
        "final-error": (final <= CONVERGENCE_TOL, f"{final:.3e} at t={final_time:g} <= {CONVERGENCE_TOL:g}"),
        "window-max-decreasing": (
            bool(all(drops)),
            f"{len(windows)} windows of {CONVERGENCE_WINDOW} steps, first {windows[0]:.3e}, last {windows[-1]:.3e}",
        ),
        "true-path-matches-recurrence": (ref_dev <= TOY_TOL, f"{ref_dev:.3e} <= {TOY_TOL:g}"),
    }
    return Report(cfg.command, columns, records, checks, _meta(cfg, L=length, N=2, H=2, M=2))


def _random_diagonal(rng, n, h):
    lam = -np.exp(rng.uniform(np.log(1e-3), 0.0, n)) + 1j * rng.normal(0.0, 3.0, n)
    delta = rng.uniform(1e-3, 0.1, n)
    b = rng.normal(size=(n, h))
    return discretize_zoh(lam, b, delta)


def _rel_inf(a, ref):
    scale = max(float(np.max(np.abs(ref), initial=0.0)), np.finfo(float).tiny)
    return float(np.max(np.abs(a - ref), initial=0.0)) / scale


def run_oracle_sweep(cfg):
    """Randomized equivalence of FFT, direct and recurrent state inference."""
    rng = np.random.default_rng(cfg.seed)
    count = cfg.steps or SWEEP_INSTANCES
    columns = ["instance", "L", "N", "H", "bidirectional", "real_kernel", "fft_direct_err", "recurrent_conv_err"]
    records = []
    for i in range(count):
        length = int(rng.choice(SWEEP_LENGTHS))
        n = int(rng.choice(SWEEP_STATES))
        h = int(rng.choice(SWEEP_INPUTS))
        bidirectional = i % 2 == 1
        real = i % 4 >= 2
        disc = _random_diagonal(rng, n, h)
        u = rng.normal(size=(length, h))
        pin = project_input(disc.b_bar, u)

        kernel = system_kernel(disc.lambda_bar, length, real=real)
        if bidirectional:
            kernel = bidirectional_kernel(kernel)
        direct = conv_direct(kernel, pin)
        fft_err = _rel_inf(conv_fft(kernel, pin), direct)
        if real:
            fft_err = max(fft_err, _rel_inf(conv_fft_real(kernel, ProjectedInput(pin.bu.real)), direct.real))

        causal = system_kernel(disc.lambda_bar, length)
        states = recurrent_scan_diagonal(disc, np.eye(n), np.zeros(0), u).states
        rec_err = max(
            _rel_inf(conv_direct(causal, pin), states),
            _rel_inf(conv_fft(causal, pin), states),
        )
        records.append(
            {
                "instance": i,
                "L": length,
                "N": n,
                "H": h,
                "bidirectional": bidirectional,
                "real_kernel": real,
                "fft_direct_err": fft_err,
                "recurrent_conv_err": rec_err,
            }
        )
    fft_worst = max(r["fft_direct_err"] for r in records)
    rec_worst = max(r["recurrent_conv_err"] for r in records)
    checks = {
        "fft-vs-direct": (fft_worst <= SWEEP_FFT_TOL, f"{fft_worst:.3e} <= {SWEEP_FFT_TOL:g} over {count} instances"),
        "recurrent-vs-conv": (rec_worst <= SWEEP_STATE_TOL, f"{rec_worst:.3e} <= {SWEEP_STATE_TOL:g}"),
    }
    return Report(cfg.command, columns, records, checks, _meta(cfg, instances=count))


def _bench_case(strategy, n, h, m, length, seed):
    """Forward-pass closure and parameter count for one strategy."""
    rng = np.random.default_rng(seed)
    u = rng.normal(size=(length, h))
    bundle = init_bundle(n, h, m, seed=seed)
    if strategy == "vanilla-recurrent-full":
        sys = ContinuousFull(
            a=hippo_normal_matrix(n), b=bundle.b_init, c=bundle.c_init, d=np.zeros((m, h))
        )
        delta = float(np.mean(bundle.delta_init))

        def run():
            return recurrent_scan_full(discretize_full(sys, delta), u).outputs

        return run, n * n + n * h + m * n + m * h
    sys = DiagonalSystem(
        lam=bundle.lambda_init, b=bundle.b_init, c=bundle.c_init, d=bundle.d_init, delta=bundle.delta_init
    )
    params = count_params(h, n, m)["ssm"]
    if strategy == "diagonal-recurrent":

        def run():
            disc = discretize_zoh(sys.lam, sys.b, sys.delta)
            return recurrent_scan_diagonal(disc, sys.c, sys.d, u).outputs

    elif strategy == "diagonal-fft":

        def run():
            return head_forward(sys, u)

    elif strategy == "diagonal-direct":

        def run():
            return head_forward(sys, u, engine="direct")

    else:
        raise UsageError(f"unknown strategy {strategy!r}")
    return run, params


def _time_round(runs, reps):
    """Warm up every closure once, then time ``reps`` interleaved rounds."""
    for run in runs.values():
        run()
    times = {name: [] for name in runs}
    for _ in range(reps):
        for name, run in runs.items():
            start = time.perf_counter()
            run()
            times[name].append(time.perf_counter() - start)
    return {name: float(np.median(ts)) for name, ts in times.items()}


def run_bench(cfg):
    """Median forward-pass wall time per strategy and sequence length."""
    if cfg.reps < MIN_REPS:
        raise UsageError(f"bench needs at least {MIN_REPS} repetitions")
    strategies = cfg.strategies or STRATEGIES
    for name in strategies:
        if name not in STRATEGIES + EXTRA_STRATEGIES:
            raise UsageError(f"unknown strategy {name!r}")
    n, h, m = cfg.sizes(64, 64)
    lengths = cfg.lengths or DEFAULT_LENGTHS
    columns = ["strategy", "L", "N", "H", "wall_seconds", "params"]
    records = []
    timing = {}
    with threadpool_limits(limits=1):
        for length in lengths:
            runs, params = {}, {}
            for name in strategies:
                if name == "vanilla-recurrent-full" and length * n > VANILLA_CAP:
                    warnings.warn(
                        f"skipping {name} at L={length}, N={n}: L*N exceeds {VANILLA_CAP}",
                        RuntimeWarning,
                        stacklevel=2,
                    )
                    continue
                runs[name], params[name] = _bench_case(name, n, h, m, length, cfg.seed)
            for name, seconds in _time_round(runs, cfg.reps).items():
                timing[name, length] = seconds
                records.append(
                    {"strategy": name, "L": length, "N": n, "H": h, "wall_seconds": seconds, "params": params[name]}
                )
    return Report(cfg.command, columns, records, bench_checks(timing, n, h), _meta(cfg, L=list(lengths), N=n, H=h, M=m))


def bench_checks(timing, n, h):
    """Scaling and ordering assertions that apply to the measured configuration."""
    checks = {}
    short, long = RATIO_LENGTHS
    for name, label, limit, above in (
        ("diagonal-fft", "fft-scaling", FFT_RATIO_MAX, False),
        ("diagonal-direct", "direct-scaling", DIRECT_RATIO_MIN, True),
    ):
        if (name, short) in timing and (name, long) in timing:
            ratio = timing[name, long] / timing[name, short]
            ok = ratio > limit if above else ratio < limit
            sign = ">" if above else "<"
            checks[label] = (ok, f"t(L={long})/t(L={short}) = {ratio:.2f} {sign} {limit:g}")
    length, n_req, h_req = ORDERING_SIZE
    if (n, h) == (n_req, h_req):
        at = {name: timing[name, length] for name in STRATEGIES if (name, length) in timing}
        if "vanilla-recurrent-full" in at and len(at) > 1:
            slowest = max(at, key=at.get)
            checks["vanilla-slowest"] = (
                slowest == "vanilla-recurrent-full",
                f"slowest at L={length} is {slowest}",
            )
        if "diagonal-recurrent" in at and "diagonal-fft" in at:
            rec, fft = at["diagonal-recurrent"], at["diagonal-fft"]
            checks["recurrent-slower-than-fft"] = (
                rec > fft,
                f"diagonal-recurrent {rec * 1e3:.2f} ms vs diagonal-fft {fft * 1e3:.2f} ms at L={length}",
            )
    return checks


def run_params(cfg):
    """Parameter breakdowns across head counts, with and without the backward kernel."""
    n, h, m = cfg.sizes(64, 64)
    counts = [s for s in HEAD_COUNTS if h % s == 0 and n % s == 0 and m % s == 0]
    skipped = [s for s in HEAD_COUNTS if s not in counts]
    if skipped:
        warnings.warn(f"head counts {skipped} do not divide N={n}, H={h}, M={m}", RuntimeWarning, stacklevel=2)
    keys = list(count_params(h, n, m))
    columns = ["heads", "bidirectional"] + keys
    records = []
    table = {}
    for s in counts:
        for bidirectional in (False, True):
            row = count_params(h, n, m, s, bidirectional)
            table[s, bidirectional] = row
            records.append({"heads": s, "bidirectional": bidirectional, **row})
    bc_ok = all(
        table[s, False]["b"] == n * h // s and table[s, False]["c"] == m * n // s for s in counts
    )
    totals = [table[s, False]["total"] for s in counts]
    decreasing = all(a > b for a, b in zip(totals, totals[1:]))
    invariant = all(table[s, False] == table[s, True] for s in counts)
    checks = {
        "b-c-blocks": (bc_ok, "B = N*H/s, C = M*N/s: " + ", ".join(f"s={s}: {table[s, False]['b']}" for s in counts)),
        "totals-decrease": (decreasing, "totals " + ", ".join(str(t) for t in totals)),
        "bidirectional-invariant": (invariant, "bidirectional counts equal causal counts"),
    }
    return Report(cfg.command, columns, records, checks, _meta(cfg, N=n, H=h, M=m, heads=counts))


def _perturbed_layer(h, n, m, s, seed, bidirectional, kernel_mode):
    rng = np.random.default_rng(seed)
    layer = init_multi_head_layer(h, n, m, s, seed=seed, bidirectional=bidirectional, kernel_mode=kernel_mode)
    # random off-default values so every tensor carries signal; the spectrum
    # stays clear of the clip floor where the subgradient is one-sided
    return layer.with_params(
        raw_real=layer.raw_real + rng.uniform(0.05, 0.3, layer.raw_real.shape),
        imag=layer.imag + rng.normal(0.0, 0.3, layer.imag.shape),
        d=rng.normal(size=layer.d.shape),
        delta=rng.uniform(0.05, 0.5, layer.delta.shape),
        mixer_w=rng.normal(0.0, 0.7, layer.mixer_w.shape),
        mixer_b=rng.normal(0.0, 0.3, layer.mixer_b.shape),
        gate_w=rng.normal(0.0, 0.7, layer.gate_w.shape),
    )


def run_gradcheck(cfg):
    """Analytic gradients against central differences on tiny random layers."""
    n, h, m = cfg.sizes(2, 2)
    length = cfg.length or 8
    if max(n, h, m) > GRADCHECK_MAX_SIZE or length > GRADCHECK_MAX_LENGTH:
        raise UsageError(
            f"gradcheck is limited to N, H, M <= {GRADCHECK_MAX_SIZE} and L <= {GRADCHECK_MAX_LENGTH}"
        )
    s = check_heads(h, n, m, cfg.heads)
    count = cfg.steps or GRADCHECK_INSTANCES
    columns = ["instance", "kernel_mode", "tensor", "max_rel_error"]
    records = []
    worst = {}
    for i in range(count):
        kernel_mode = ("real", "complex")[i % 2]
        seed = cfg.seed + i
        layer = _perturbed_layer(h, n, m, s, seed, cfg.bidirectional, kernel_mode)
        rng = np.random.default_rng(seed + 1)
        inputs = rng.normal(size=(2, length, h))
        targets = rng.normal(size=(2, length, m))
        _, analytic = analytic_grad(layer, inputs, targets)
        numeric = layer_finite_diff_grad(layer, inputs, targets)
        for name, err in relative_errors(analytic, numeric).items():
            records.append({"instance": i, "kernel_mode": kernel_mode, "tensor": name, "max_rel_error": err})
            worst[name] = max(worst.get(name, 0.0), err)
    checks = {name: (err <= GRADCHECK_TOL, f"max relative error {err:.3e} <= {GRADCHECK_TOL:g}") for name, err in worst.items()}
    return Report(cfg.command, columns, records, checks, _meta(cfg, L=length, N=n, H=h, M=m, heads=s))


def run_train_demo(cfg):
    """System identification: fit a student layer to a fixed teacher head."""
    n, h, m = cfg.sizes(4, 4)
    length = cfg.length or 128
    train_cfg = TrainConfig(
        steps=cfg.steps or 500,
        learning_rate=0.01 if cfg.learning_rate is None else cfg.learning_rate,
        seed=cfg.seed,
        length=length,
    )
    teacher = init_multi_head_layer(h, n, m, 1, seed=cfg.seed + TEACHER_SEED_OFFSET).heads[0]
    student = init_multi_head_layer(h, n, m, cfg.heads, seed=cfg.seed, bidirectional=cfg.bidirectional)
    losses = fit_system_id(teacher, student, train_cfg).losses
    ratio = float(losses[-1] / losses[0]) if losses[0] > 0 else 0.0
    columns = ["step", "loss"]
    records = [{"step": k, "loss": float(loss)} for k, loss in enumerate(losses)]
    checks = {"loss-ratio": (ratio <= TRAIN_RATIO, f"final/initial = {ratio:.4f} <= {TRAIN_RATIO:g}")}
    meta = _meta(cfg, L=length, N=n, H=h, M=m, heads=cfg.heads)
    meta.update(steps=train_cfg.steps, learning_rate=train_cfg.learning_rate)
    return Report(cfg.command, columns, records, checks, meta)


RUNNERS = {
    "toy-equivalence": run_toy_equivalence,
    "convergence": run_convergence,
    "oracle-sweep": run_oracle_sweep,
    "bench": run_bench,
    "params": run_params,
    "train-demo": run_train_demo,
    "gradcheck": run_gradcheck,
}


def run(cfg):
    return RUNNERS[cfg.command](cfg)
