#!/usr/bin/env python3
"""
Tiny Networks and Trainers

A dense network over a flat parameter vector with exact reverse-mode
gradients, an Adam optimizer with a step-decay schedule, versioned JSON
checkpoints, and the training loops of the toy simulations:

    train_synthesis        decoder trained on ỹ from a fixed affine analysis
    train_joint            analysis, decoder and a learned scalar entropy model
                           trained on R + lambda * D through a surrogate
    train_laplace_rd       rate-distortion points on the standard Laplace source
    post_train             decoder and entropy model retuned on rounded latents
    lower_bound_sweep      joint training over lower bounds, each post-trained

Every training step draws its data and noise from a stream derived from
(seed, step), so trajectories are reproducible and independent of batching
order elsewhere.
"""

import copy
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import special, stats

from core.entropy_model import (
    EntropyModel,
    GaussianEntropyModel,
    LaplacianEntropyModel,
    half_integers,
    integration_window,
    rate_bits,
    rate_param_grads,
    soft_noise_density,
    source_mass,
    zero_center_quantize,
)
from core.errors import ConfigError, InvalidParameter, NonConvergence, NumericalError, ShapeMismatch, UnsupportedForward
from core.numerics import DEFAULT_QUADRATURE, Quadrature, Seed, compensated_mean, compensated_sum, integrate
from core.sources import AffineAnalysis, Gaussian1D, Gaussian2D, Laplace1D
from core.surrogates import (
    DECISION_KINDS,
    AnnealSchedule,
    SurrogateKind,
    SurrogateSpec,
    ceil_probability,
    denoise_r,
    denoise_r_grad,
    draw_noise,
    forward,
    round_half,
    soft_fn,
    soft_fn_grad,
    soft_inv,
)


ACTIVATIONS = ("relu", "softplus", "identity")
CHECKPOINT_VERSION = 1

GRADIENT_CHECK_TOL = 1e-5
EVAL_CHUNK = 65536

# Lower bound of the learned Laplace scale in the rate-distortion experiment
LAPLACE_SCALE_BOUND = 0.08
POST_TRAIN_BOUND = 1e-6
LOWER_BOUNDS = (1e-6, 0.05, 0.11, 0.16, 0.25)

# Joint-training forwards and the backward rules each accepts
JOINT_RULES = {
    "ROUND": ("STE",),
    "AUN": ("PGE",),
    "SUA": ("PGE", "STE"),
    "SR": ("STE", "EP"),
    "SRA": ("STE", "EP"),
    "MIX": ("STE",),
}


# -- network -----------------------------------------------------------------

def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "softplus":
        return np.logaddexp(0.0, z)
    return z


def _activate_grad(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0).astype(float)
    if name == "softplus":
        return special.expit(z)
    return np.ones_like(z)


class Mlp:
    """
    Dense network over a flat parameter vector.

    Layer l maps h to act(h W_l + b_l); the last layer is affine. With
    residual=True, hidden layers whose input and output widths agree compute
    h + act(h W_l + b_l).
    """

    def __init__(
        self,
        layer_sizes: Sequence[int],
        activation: str = "softplus",
        residual: bool = False,
        params: Optional[np.ndarray] = None,
        seed: Optional[Seed] = None
    ):
        sizes = [int(n) for n in layer_sizes]
        if len(sizes) < 2 or any(n < 1 for n in sizes):
            raise InvalidParameter(f"Mlp needs at least two positive layer sizes, got {list(layer_sizes)}")
        if activation not in ACTIVATIONS:
            raise InvalidParameter(f"Unknown activation {activation!r}; expected one of {ACTIVATIONS}")
        self.layer_sizes = sizes
        self.activation = activation
        self.residual = bool(residual)

        self.layout: List[Tuple[int, Tuple[int, int], int, int]] = []
        offset = 0
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            w_offset = offset
            offset += n_in * n_out
            self.layout.append((w_offset, (n_in, n_out), offset, n_out))
            offset += n_out
        self.n_params = offset
        self._cache: Optional[List[Tuple[np.ndarray, np.ndarray]]] = None

        if params is None:
            self.params = self._initial_params(seed or Seed(root=0))
        else:
            params = np.array(params, dtype=float).ravel()
            if params.size != self.n_params:
                raise ShapeMismatch(f"Mlp{sizes} needs {self.n_params} parameters, got {params.size}")
            self.params = params

    @property
    def n_layers(self) -> int:
        return len(self.layout)

    def _initial_params(self, seed: Seed) -> np.ndarray:
        params = np.zeros(self.n_params)
        generator = seed.generator()
        for index, (w_offset, (n_in, n_out), _, _) in enumerate(self.layout):
            if self.n_layers == 1 and n_in == n_out:
                weights = np.eye(n_in)
            else:
                weights = generator.standard_normal((n_in, n_out)) / math.sqrt(n_in)
            params[w_offset:w_offset + n_in * n_out] = weights.ravel()
        return params

    def weight(self, layer: int) -> np.ndarray:
        w_offset, shape, _, _ = self.layout[layer]
        return self.params[w_offset:w_offset + shape[0] * shape[1]].reshape(shape)

    def bias(self, layer: int) -> np.ndarray:
        _, _, b_offset, n_out = self.layout[layer]
        return self.params[b_offset:b_offset + n_out]

    def _is_residual(self, layer: int) -> bool:
        _, (n_in, n_out), _, _ = self.layout[layer]
        return self.residual and layer < self.n_layers - 1 and n_in == n_out

    def forward(self, x) -> np.ndarray:
        """Evaluate the network on a batch of shape (batch, layer_sizes[0]); caches for backward."""
        h = np.asarray(x, dtype=float)
        if h.ndim != 2 or h.shape[1] != self.layer_sizes[0]:
            raise ShapeMismatch(f"Mlp input must have shape (batch, {self.layer_sizes[0]}), got {h.shape}")
        cache = []
        last = self.n_layers - 1
        for layer in range(self.n_layers):
            z = h @ self.weight(layer) + self.bias(layer)
            a = z if layer == last else _activate(self.activation, z)
            cache.append((h, z))
            h = h + a if self._is_residual(layer) else a
        self._cache = cache
        return h

    def backward(self, upstream) -> Tuple[np.ndarray, np.ndarray]:
        """
        Reverse-mode gradients of sum(upstream * output) for the cached forward.

        Returns:
            (flat parameter gradient, input gradient)
        """
        if self._cache is None:
            raise ShapeMismatch("Mlp.backward called before forward")
        g = np.asarray(upstream, dtype=float)
        expected = (self._cache[0][0].shape[0], self.layer_sizes[-1])
        if g.shape != expected:
            raise ShapeMismatch(f"Upstream gradient must have shape {expected}, got {g.shape}")

        grad = np.zeros(self.n_params)
        last = self.n_layers - 1
        for layer in range(last, -1, -1):
            h, z = self._cache[layer]
            w_offset, (n_in, n_out), b_offset, _ = self.layout[layer]
            dz = g if layer == last else g * _activate_grad(self.activation, z)
            grad[w_offset:w_offset + n_in * n_out] = (h.T @ dz).ravel()
            grad[b_offset:b_offset + n_out] = dz.sum(axis=0)
            dh = dz @ self.weight(layer).T
            g = dh + g if self._is_residual(layer) else dh
        return grad, g

    def predict(self, x) -> np.ndarray:
        """Forward pass in chunks, for large evaluation batches."""
        x = np.asarray(x, dtype=float)
        parts = [self.forward(x[start:start + EVAL_CHUNK]) for start in range(0, x.shape[0], EVAL_CHUNK)]
        self._cache = None
        return np.concatenate(parts, axis=0) if parts else np.zeros((0, self.layer_sizes[-1]))

    def copy(self) -> "Mlp":
        return Mlp(self.layer_sizes, self.activation, self.residual, params=self.params.copy())

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "activation": self.activation,
            "residual": self.residual,
            "params": [float(p) for p in self.params]
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Mlp":
        return cls(data["layer_sizes"], data.get("activation", "softplus"), data.get("residual", False), params=data["params"])


def mlp_forward(net: Mlp, x) -> np.ndarray:
    return net.forward(x)


def mlp_backward(net: Mlp, upstream) -> Tuple[np.ndarray, np.ndarray]:
    return net.backward(upstream)


def gradient_check(net: Mlp, x, probes: int = 100, seed: Optional[Seed] = None, h: float = 1e-4) -> float:
    """
    Largest relative error between analytic and central-difference parameter gradients.

    The probe loss is sum(w * net(x)) with fixed random weights w; relative
    errors use max(|analytic|, |numeric|, 1e-5) as denominator.
    """
    seed = seed or Seed(root=0)
    generator = seed.generator()
    x = np.asarray(x, dtype=float)
    weights = generator.standard_normal((x.shape[0], net.layer_sizes[-1]))

    def loss() -> float:
        return compensated_sum(weights * net.forward(x))

    net.forward(x)
    analytic, _ = net.backward(weights)
    indices = generator.choice(net.n_params, size=min(int(probes), net.n_params), replace=False)
    worst = 0.0
    for index in indices:
        saved = net.params[index]
        net.params[index] = saved + h
        upper = loss()
        net.params[index] = saved - h
        lower = loss()
        net.params[index] = saved
        numeric = (upper - lower) / (2.0 * h)
        scale = max(abs(analytic[index]), abs(numeric), 1e-5)
        worst = max(worst, abs(analytic[index] - numeric) / scale)
    net._cache = None
    return worst


# -- optimizer and checkpoints -----------------------------------------------

@dataclass
class Adam:
    """Adam with a step decay: the rate drops by decay_factor once step >= decay_at * total_steps."""
    size: int
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    total_steps: int = 0
    decay_at: float = 0.8
    decay_factor: float = 0.1
    step: int = 0
    m: Optional[np.ndarray] = field(default=None, repr=False)
    v: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidParameter(f"Adam learning_rate must be > 0, got {self.learning_rate}")
        if not 0 < self.decay_factor <= 1:
            raise InvalidParameter(f"Adam decay_factor must lie in (0, 1], got {self.decay_factor}")
        self.m = np.zeros(self.size) if self.m is None else np.asarray(self.m, dtype=float)
        self.v = np.zeros(self.size) if self.v is None else np.asarray(self.v, dtype=float)

    def rate(self) -> float:
        if self.total_steps and self.step >= self.decay_at * self.total_steps:
            return self.learning_rate * self.decay_factor
        return self.learning_rate

    def update(self, params: np.ndarray, grad: np.ndarray) -> None:
        """Apply one step to `params` in place."""
        self.step += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.step)
        v_hat = self.v / (1.0 - self.beta2 ** self.step)
        params -= self.rate() * m_hat / (np.sqrt(v_hat) + self.eps)

    def to_dict(self) -> dict:
        return {
            "size": self.size,
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "total_steps": self.total_steps,
            "decay_at": self.decay_at,
            "decay_factor": self.decay_factor,
            "step": self.step,
            "m": [float(a) for a in self.m],
            "v": [float(a) for a in self.v]
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Adam":
        return cls(**data)


def save_checkpoint(path: Union[str, Path], net: Mlp, optimizer: Optional[Adam] = None, step: int = 0) -> Path:
    """Write a versioned JSON checkpoint; floats are written with round-trip precision."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "version": CHECKPOINT_VERSION,
        "network": net.to_dict(),
        "optimizer": optimizer.to_dict() if optimizer is not None else None,
        "step": int(step)
    }
    with open(path, "w") as f:
        json.dump(payload, f)
    return path


def load_checkpoint(path: Union[str, Path]) -> Tuple[Mlp, Optional[Adam], int]:
    with open(path) as f:
        payload = json.load(f)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"Unsupported checkpoint version {payload.get('version')!r} in {path}")
    optimizer = Adam.from_dict(payload["optimizer"]) if payload.get("optimizer") else None
    return Mlp.from_dict(payload["network"]), optimizer, int(payload.get("step", 0))


# -- Bayes-optimal distortion ------------------------------------------------

def _truncated_variance(lo, hi, source: Gaussian1D) -> np.ndarray:
    """Variance of Y restricted to [lo, hi]; 0 where the interval carries no mass."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    mass = source_mass(source, lo, hi)
    with np.errstate(all="ignore"):
        var = stats.truncnorm.var((lo - source.mu) / source.sigma, (hi - source.mu) / source.sigma,
                                  loc=source.mu, scale=source.sigma)
    return np.where((mass > 1e-300) & np.isfinite(var), var, 0.0)


def bayes_distortion(spec: SurrogateSpec, source: Gaussian1D, q: Quadrature = DEFAULT_QUADRATURE) -> float:
    """
    E[Var(X | Ỹ)] for X ~ N(0, 1) and the latent Y = sigma X + mu with law `source`.

    This is the distortion of the conditional-mean decoder, the best any
    synthesis transform can reach.
    """
    kind = spec.kind
    lo, hi = integration_window(source)
    scale = source.variance

    if kind == SurrogateKind.SHA:
        return 0.0
    if kind == SurrogateKind.ROUND:
        bins = np.arange(math.floor(lo), math.ceil(hi) + 1, dtype=float)
        masses = source_mass(source, bins - 0.5, bins + 0.5)
        return compensated_sum(masses * _truncated_variance(bins - 0.5, bins + 0.5, source)) / scale
    if kind in (SurrogateKind.AUN, SurrogateKind.UQ_I, SurrogateKind.UQ_S):
        def integrand(t: np.ndarray) -> np.ndarray:
            return source_mass(source, t - 0.5, t + 0.5) * _truncated_variance(t - 0.5, t + 0.5, source)
        return integrate(integrand, lo, hi, q, [source.mu - 0.5, source.mu + 0.5]) / scale
    if kind in (SurrogateKind.SUA, SurrogateKind.SUA_N):
        alpha = spec.alpha
        density = soft_noise_density(source, alpha)
        z_lo, z_hi = float(soft_fn(lo, alpha)) - 0.5, float(soft_fn(hi, alpha)) + 0.5

        def integrand(z: np.ndarray) -> np.ndarray:
            left, right = np.asarray(soft_inv(z - 0.5, alpha)), np.asarray(soft_inv(z + 0.5, alpha))
            return density(z) * _truncated_variance(left, right, source)
        return integrate(integrand, z_lo, z_hi, q, half_integers(z_lo, z_hi)) / scale
    if kind in DECISION_KINDS:
        return _mixture_distortion(spec, source, q) / scale
    raise UnsupportedForward(f"bayes_distortion does not support {kind.value}")


def _mixture_distortion(spec: SurrogateSpec, source: Gaussian1D, q: Quadrature) -> float:
    """E[Var(Y | Ỹ)] = E[Y^2] - sum_n P(n) E[Y | n]^2 for the stochastic rounding kinds."""
    lo, hi = integration_window(source)
    first, last = math.floor(lo), math.ceil(hi)
    mass = np.zeros(last - first + 1)
    moment = np.zeros(last - first + 1)
    for index, k in enumerate(range(first, last)):
        k = float(k)

        def up0(y):
            return np.asarray(source.pdf(y)) * np.asarray(ceil_probability(spec, y))

        def up1(y):
            return y * up0(y)

        all0 = float(source_mass(source, k, k + 1.0))
        all1 = integrate(lambda y: y * np.asarray(source.pdf(y)), k, k + 1.0, q)
        m0 = integrate(up0, k, k + 1.0, q, [k + 0.5])
        m1 = integrate(up1, k, k + 1.0, q, [k + 0.5])
        mass[index + 1] += m0
        moment[index + 1] += m1
        mass[index] += max(all0 - m0, 0.0)
        moment[index] += all1 - m1
    live = mass > 1e-300
    explained = compensated_sum(moment[live] ** 2 / mass[live])
    return max(source.variance + source.mu ** 2 - explained, 0.0)


# -- training configuration --------------------------------------------------

@dataclass
class TrainConfig:
    """Training schedule and tradeoff for the toy simulations."""
    steps: int = 50000
    batch: int = 256
    learning_rate: float = 1e-3
    decay_at: float = 0.8
    decay_factor: float = 0.1
    lam: float = 1.0
    anneal: Optional[AnnealSchedule] = None
    seed: Seed = field(default_factory=lambda: Seed(root=0))
    stop_gradient_mu: bool = False
    hidden: Tuple[int, ...] = (64, 64, 64)
    activation: str = "softplus"
    n_eval: int = 10 ** 6
    log_every: int = 0
    convergence_tol: float = 0.05
    check_gradients: bool = True

    def __post_init__(self):
        if self.steps < 1 or self.batch < 1:
            raise InvalidParameter(f"TrainConfig needs steps >= 1 and batch >= 1, got {self.steps}, {self.batch}")
        if not self.lam > 0:
            raise InvalidParameter(f"TrainConfig lambda must be > 0, got {self.lam}")
        if not 0 < self.decay_factor <= 1:
            raise InvalidParameter(f"TrainConfig decay_factor must lie in (0, 1], got {self.decay_factor}")
        if self.n_eval < 2:
            raise InvalidParameter(f"TrainConfig n_eval must be >= 2, got {self.n_eval}")
        self.seed = Seed.from_value(self.seed)
        self.hidden = tuple(int(h) for h in self.hidden)

    def optimizer(self, size: int) -> Adam:
        return Adam(size, learning_rate=self.learning_rate, total_steps=self.steps,
                    decay_at=self.decay_at, decay_factor=self.decay_factor)


def _check_convergence(history: Sequence[float], cfg: TrainConfig, tag: str) -> None:
    """Raise NonConvergence if the last 20% of steps is worse than the first 5%."""
    history = np.asarray(history, dtype=float)
    if history.size < 20:
        return
    head = compensated_mean(history[:max(history.size // 20, 1)])
    tail = compensated_mean(history[-max(history.size // 5, 1):])
    if tail > head + cfg.convergence_tol * abs(head):
        raise NonConvergence(f"{tag}: loss did not improve (first steps {head:.6g}, final 20% {tail:.6g})")


def _check_finite(loss: float, step: int, tag: str) -> None:
    if not math.isfinite(loss):
        raise NonConvergence(f"{tag}: non-finite loss {loss} at step {step}")


def _preflight(net: Mlp, x: np.ndarray, cfg: TrainConfig, tag: str) -> None:
    if not cfg.check_gradients:
        return
    error = gradient_check(net.copy(), x, probes=20, seed=cfg.seed.derive(999))
    if error > GRADIENT_CHECK_TOL:
        raise NumericalError(f"{tag}: gradient check failed with relative error {error:.3g}")


def _log_progress(logger, run_id: Optional[str], tag: str, step: int, loss: float, cfg: TrainConfig, extra=None) -> None:
    if logger is None or not cfg.log_every or (step + 1) % cfg.log_every:
        return
    logger.log_training_progress(run_id, tag, step + 1, loss, extra or {})


# -- synthesis training ------------------------------------------------------

@dataclass
class SynthesisResult:
    """Decoder trained on surrogate latents and its distortion against the rounding baseline."""
    spec: SurrogateSpec
    net: Mlp
    D_tilde: float
    D_tilde_se: float
    D_round: float
    D_round_se: float
    history: List[float] = field(default_factory=list, repr=False)

    @property
    def delta_D_rel(self) -> float:
        return (self.D_tilde - self.D_round) / self.D_round

    def to_dict(self) -> dict:
        return {
            "calc": self.spec.kind.value,
            "alpha": self.spec.alpha,
            "D_tilde_mse": self.D_tilde,
            "D_tilde_se": self.D_tilde_se,
            "D_round_mse": self.D_round,
            "D_round_se": self.D_round_se,
            "delta_D_rel": self.delta_D_rel
        }


def _standard_pair(source: Union[Gaussian1D, Gaussian2D], seed: Seed, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Draw (x, y) with X standard and the latent y from the fixed affine analysis."""
    if isinstance(source, Gaussian1D):
        analysis = AffineAnalysis(source.sigma, source.mu)
        x = seed.generator().standard_normal((int(n), 1))
        return x, analysis(x)
    x = Gaussian2D(1.0, source.rho).sample(seed, n)
    return x, source.sigma * x


def _decoder_distortion(net: Mlp, spec: SurrogateSpec, source, n: int, seed: Seed) -> Tuple[float, float]:
    x, y = _standard_pair(source, seed.derive(0), n)
    noise = draw_noise(spec, y.shape, seed.derive(1).generator())
    x_hat = net.predict(np.asarray(forward(spec, y, noise)).reshape(y.shape))
    errors = np.sum((x - x_hat) ** 2, axis=1)
    return compensated_mean(errors), float(np.std(errors, ddof=1) / math.sqrt(errors.size))


def _train_decoder(spec: SurrogateSpec, source, cfg: TrainConfig, tag: str, logger=None, run_id=None) -> Tuple[Mlp, List[float]]:
    dim = 1 if isinstance(source, Gaussian1D) else 2
    net = Mlp([dim, *cfg.hidden, dim], cfg.activation, seed=cfg.seed.derive(7))
    probe_x, probe_y = _standard_pair(source, cfg.seed.derive(8), 16)
    _preflight(net, probe_y, cfg, tag)
    optimizer = cfg.optimizer(net.n_params)
    history = []
    for step in range(cfg.steps):
        stream = cfg.seed.derive(1, step)
        x, y = _standard_pair(source, stream.derive(0), cfg.batch)
        noise = draw_noise(spec, y.shape, stream.derive(1).generator())
        y_tilde = np.asarray(forward(spec, y, noise)).reshape(y.shape)
        x_hat = net.forward(y_tilde)
        residual = x_hat - x
        loss = float(np.mean(np.sum(residual ** 2, axis=1)))
        _check_finite(loss, step, tag)
        grad, _ = net.backward(2.0 * residual / cfg.batch)
        optimizer.update(net.params, grad)
        history.append(loss)
        _log_progress(logger, run_id, tag, step, loss, cfg)
    _check_convergence(history, cfg, tag)
    return net, history


def train_synthesis(
    spec: SurrogateSpec,
    source: Union[Gaussian1D, Gaussian2D],
    cfg: TrainConfig,
    logger=None,
    run_id: Optional[str] = None,
    baseline: Optional[Tuple[float, float]] = None
) -> SynthesisResult:
    """
    Train a synthesis transform on ỹ = forward(spec, y, noise) and compare its
    distortion with a separately trained rounding decoder.

    Args:
        spec: Forward calculation used in training and in evaluating D_tilde
        source: Law of the latent (Gaussian1D(mu, sigma) or Gaussian2D(sigma, rho))
        cfg: Training schedule
        baseline: Precomputed (D_round, D_round_se) to skip the rounding run

    Returns:
        SynthesisResult; ROUND reuses its own decoder as baseline, so delta_D_rel = 0
    """
    tag = f"synthesis/{spec.label}"
    net, history = _train_decoder(spec, source, cfg, tag, logger, run_id)
    eval_seed = cfg.seed.derive(2)
    d_tilde, d_tilde_se = _decoder_distortion(net, spec, source, cfg.n_eval, eval_seed)

    rounding = SurrogateSpec(SurrogateKind.ROUND)
    if spec.kind == SurrogateKind.ROUND:
        d_round, d_round_se = d_tilde, d_tilde_se
    elif baseline is not None:
        d_round, d_round_se = baseline
    else:
        base_net, _ = _train_decoder(rounding, source, cfg, "synthesis/ROUND", logger, run_id)
        d_round, d_round_se = _decoder_distortion(base_net, rounding, source, cfg.n_eval, eval_seed)
    if not d_round > 0:
        raise NumericalError(f"Rounding baseline distortion must be > 0, got {d_round}")
    return SynthesisResult(spec, net, d_tilde, d_tilde_se, d_round, d_round_se, history)


# -- joint training ----------------------------------------------------------

class ToyCodec:
    """
    Scalar codec: analysis net, synthesis net and a learned entropy model.

    The entropy model parameters are (mu_q, log scale); `bound` is the lower
    bound on the scale. With zero_center the latent is quantized around mu_q.
    """

    def __init__(
        self,
        analysis: Mlp,
        synthesis: Mlp,
        family: str = "gaussian",
        bound: float = 0.0,
        zero_center: bool = False,
        mu: float = 0.0,
        scale: float = 1.0,
        learn_mu: bool = True
    ):
        if family not in ("gaussian", "laplace"):
            raise InvalidParameter(f"ToyCodec family must be 'gaussian' or 'laplace', got {family!r}")
        if analysis.layer_sizes[0] != 1 or analysis.layer_sizes[-1] != 1 or synthesis.layer_sizes[0] != 1:
            raise ShapeMismatch("ToyCodec needs scalar analysis and synthesis transforms")
        self.analysis = analysis
        self.synthesis = synthesis
        self.family = family
        self.bound = float(bound)
        self.zero_center = bool(zero_center)
        self.learn_mu = bool(learn_mu)
        self.entropy = np.array([float(mu), math.log(scale)])

    @property
    def mu(self) -> float:
        return float(self.entropy[0])

    @property
    def scale(self) -> float:
        return float(math.exp(self.entropy[1]))

    def model(self) -> EntropyModel:
        if self.family == "gaussian":
            return GaussianEntropyModel(self.mu, self.scale, self.bound)
        return LaplacianEntropyModel(self.mu, self.scale, self.bound)

    def quantize(self, y: np.ndarray) -> np.ndarray:
        if self.zero_center:
            return np.asarray(zero_center_quantize(y, self.mu))
        return np.asarray(round_half(y))

    def copy(self) -> "ToyCodec":
        return copy.deepcopy(self)

    def to_dict(self) -> dict:
        return {
            "analysis": self.analysis.to_dict(),
            "synthesis": self.synthesis.to_dict(),
            "family": self.family,
            "bound": self.bound,
            "zero_center": self.zero_center,
            "mu_q": self.mu,
            "scale": self.scale
        }


@dataclass
class CodecEval:
    """True (rounded) performance of a codec; rate in bits, distortion as MSE."""
    rate_bits: float
    rate_se: float
    mse: float
    mse_se: float
    loss: float
    loss_se: float


def evaluate_codec(codec: ToyCodec, source, n: int, seed: Seed, lam: float = 1.0) -> CodecEval:
    """Evaluate R + lam * D with rounding (zero-centre rounding when enabled) on n held-out samples."""
    x = source.sample(seed, n)[:, None]
    y_hat = codec.quantize(codec.analysis.predict(x)[:, 0])
    rates = np.asarray(rate_bits(codec.model(), y_hat))
    errors = (x[:, 0] - codec.synthesis.predict(y_hat[:, None])[:, 0]) ** 2
    losses = rates + lam * errors

    def se(values: np.ndarray) -> float:
        return float(np.std(values, ddof=1) / math.sqrt(values.size))

    return CodecEval(
        rate_bits=compensated_mean(rates), rate_se=se(rates),
        mse=compensated_mean(errors), mse_se=se(errors),
        loss=compensated_mean(losses), loss_se=se(losses)
    )


@dataclass
class ZeroCenterForward:
    """Zero-centre SUA value and its derivatives with respect to y and mu_q."""
    value: np.ndarray
    d_y: np.ndarray
    d_mu: np.ndarray


def forward_zero_center_partial_sg(y, mu_q, spec: SurrogateSpec, u, stop_gradient: bool = True) -> ZeroCenterForward:
    """
    ỹ = r(s(y - sg(mu_q)) + u) + sg(mu_q) for the SUA family.

    The value does not depend on stop_gradient. dỹ/dmu_q is 1 - dỹ/dy without
    the stop-gradient and 0 with it.
    """
    if spec.kind not in (SurrogateKind.SUA, SurrogateKind.SUA_N):
        raise UnsupportedForward(f"Zero-centre partial stop-gradient needs SUA or SUA_N, got {spec.kind.value}")
    y = np.asarray(y, dtype=float)
    centred = y - mu_q
    z = np.asarray(soft_fn(centred, spec.alpha)) + np.asarray(u, dtype=float)
    slope = np.asarray(soft_fn_grad(centred, spec.alpha))
    if spec.kind == SurrogateKind.SUA:
        value = np.asarray(denoise_r(z, spec.alpha)) + mu_q
        d_y = np.asarray(denoise_r_grad(z, spec.alpha)) * slope
    else:
        value = z + mu_q
        d_y = slope
    d_mu = np.zeros_like(d_y) if stop_gradient else 1.0 - d_y
    return ZeroCenterForward(value=value, d_y=d_y, d_mu=d_mu)


@dataclass
class _SurrogatePath:
    rate_value: np.ndarray
    dist_value: np.ndarray
    rate_dy: np.ndarray
    dist_dy: np.ndarray
    rate_dmu: np.ndarray
    dist_dmu: np.ndarray


def _surrogate_path(label: str, rule: str, y: np.ndarray, u: np.ndarray, alpha: Optional[float],
                    offset: float, zero_center: bool, stop_gradient: bool) -> _SurrogatePath:
    """Values and pathwise derivatives of the rate and distortion inputs."""
    c = y - offset
    ones = np.ones_like(c)
    if label == "ROUND":
        t, jac = np.asarray(round_half(c)), ones
    elif label in ("AUN", "MIX"):
        t, jac = c + u, ones
    elif label == "SUA":
        z = np.asarray(soft_fn(c, alpha)) + u
        t = np.asarray(denoise_r(z, alpha))
        slope = np.asarray(soft_fn_grad(c, alpha))
        jac = np.asarray(denoise_r_grad(z, alpha)) * slope if rule == "PGE" else slope
    else:
        spec = SurrogateSpec(SurrogateKind(label), alpha=alpha)
        t = np.asarray(forward(spec, c, u + 0.5))
        jac = ones if label == "SR" else np.asarray(soft_fn_grad(c, alpha))

    d_mu = (1.0 - jac) if zero_center and not stop_gradient else np.zeros_like(c)
    if label == "MIX":
        hard = np.asarray(round_half(c))
        return _SurrogatePath(t + offset, hard + offset, jac, ones, d_mu, np.zeros_like(c))
    return _SurrogatePath(t + offset, t + offset, jac, jac, d_mu, d_mu)


def _joint_step(codec: ToyCodec, x: np.ndarray, u: np.ndarray, label: str, rule: str,
                alpha: Optional[float], lam: float, stop_gradient: bool) -> Tuple[float, Dict[str, np.ndarray]]:
    """Loss mean(R + lam * D) and gradients for analysis, synthesis and entropy parameters."""
    batch = x.shape[0]
    y = codec.analysis.forward(x[:, None])[:, 0]
    model = codec.model()
    scale = codec.scale

    if rule == "EP":
        spec = SurrogateSpec(SurrogateKind(label), alpha=alpha)
        low = np.floor(y)
        high = low + 1.0
        p = np.asarray(ceil_probability(spec, y))
        slope = np.ones_like(y) if label == "SR" else np.asarray(soft_fn_grad(y, alpha))
        rate_low, rate_high = np.asarray(rate_bits(model, low)), np.asarray(rate_bits(model, high))
        _, mu_low, scale_low = rate_param_grads(model, low)
        _, mu_high, scale_high = rate_param_grads(model, high)
        x_hat = codec.synthesis.forward(np.concatenate([low, high])[:, None])[:, 0]
        err_low, err_high = x_hat[:batch] - x, x_hat[batch:] - x
        loss_low = rate_low + lam * err_low ** 2
        loss_high = rate_high + lam * err_high ** 2
        loss = compensated_mean((1.0 - p) * loss_low + p * loss_high)
        upstream = np.concatenate([(1.0 - p) * 2.0 * lam * err_low, p * 2.0 * lam * err_high]) / batch
        synthesis_grad, _ = codec.synthesis.backward(upstream[:, None])
        grad_y = slope * (loss_high - loss_low) / batch
        grad_mu = float(np.mean((1.0 - p) * mu_low + p * mu_high))
        grad_scale = float(np.mean((1.0 - p) * scale_low + p * scale_high))
    else:
        offset = codec.mu if codec.zero_center else 0.0
        path = _surrogate_path(label, rule, y, u, alpha, offset, codec.zero_center, stop_gradient)
        rates = np.asarray(rate_bits(model, path.rate_value))
        rate_dt, rate_dmu, rate_dscale = rate_param_grads(model, path.rate_value)
        x_hat = codec.synthesis.forward(path.dist_value[:, None])[:, 0]
        err = x_hat - x
        loss = compensated_mean(rates + lam * err ** 2)
        synthesis_grad, dist_dt = codec.synthesis.backward((2.0 * lam * err / batch)[:, None])
        dist_dt = dist_dt[:, 0]
        grad_y = rate_dt * path.rate_dy / batch + dist_dt * path.dist_dy
        grad_mu = float(np.mean(rate_dmu + rate_dt * path.rate_dmu) + np.sum(dist_dt * path.dist_dmu))
        grad_scale = float(np.mean(rate_dscale))

    analysis_grad, _ = codec.analysis.backward(grad_y[:, None])
    entropy_grad = np.array([grad_mu if codec.learn_mu else 0.0, grad_scale * scale])
    return loss, {"analysis": analysis_grad, "synthesis": synthesis_grad, "entropy": entropy_grad}


@dataclass
class JointResult:
    codec: ToyCodec
    history: List[float] = field(default_factory=list, repr=False)


def _parse_joint_forward(forward_label: str, rule: str) -> Tuple[str, Optional[float]]:
    name, _, param = str(forward_label).partition("@")
    name = name.strip().upper()
    if name not in JOINT_RULES:
        raise UnsupportedForward(f"Joint training does not support forward {forward_label!r}")
    if rule not in JOINT_RULES[name]:
        raise UnsupportedForward(f"Joint training with {name} accepts rules {JOINT_RULES[name]}, got {rule!r}")
    return name, float(param) if param else None


def train_joint(
    codec: ToyCodec,
    source,
    forward_label: str,
    rule: str,
    cfg: TrainConfig,
    logger=None,
    run_id: Optional[str] = None,
    train_analysis: bool = True,
    tag: Optional[str] = None
) -> JointResult:
    """
    Train a codec on mean(R(ỹ) + lam * (x - g_s(ỹ))^2) through a surrogate.

    Args:
        codec: Codec to train in place
        source: Scalar source of x
        forward_label: ROUND, AUN, SUA@alpha, SR, SRA@alpha or MIX
        rule: Backward rule allowed for the forward (see JOINT_RULES)
        cfg: Schedule, tradeoff and seed; cfg.anneal overrides alpha per step
        train_analysis: False freezes the analysis transform

    Raises:
        UnsupportedForward: unknown forward or rule, or EP combined with zero-centre quantization
        NonConvergence: non-finite loss or no improvement
    """
    label, alpha = _parse_joint_forward(forward_label, rule)
    if rule == "EP" and codec.zero_center:
        raise UnsupportedForward("Expected-gradient training does not support zero-centre quantization")
    if label in ("SUA", "SRA") and alpha is None and cfg.anneal is None:
        raise InvalidParameter(f"{label} needs an alpha (e.g. {label}@5) or an anneal schedule")
    tag = tag or f"joint/{forward_label}/{rule}"

    probe = source.sample(cfg.seed.derive(8), 16)[:, None]
    _preflight(codec.synthesis, codec.analysis.forward(probe), cfg, tag)
    _preflight(codec.analysis, probe, cfg, tag)

    optimizers = {
        "synthesis": cfg.optimizer(codec.synthesis.n_params),
        "entropy": cfg.optimizer(2)
    }
    if train_analysis:
        optimizers["analysis"] = cfg.optimizer(codec.analysis.n_params)
    targets = {"analysis": codec.analysis.params, "synthesis": codec.synthesis.params, "entropy": codec.entropy}

    history = []
    for step in range(cfg.steps):
        step_alpha = cfg.anneal.alpha(step) if cfg.anneal is not None else alpha
        stream = cfg.seed.derive(1, step)
        x = source.sample(stream.derive(0), cfg.batch)
        u = stream.derive(1).generator().random(cfg.batch) - 0.5
        loss, grads = _joint_step(codec, x, u, label, rule, step_alpha, cfg.lam, cfg.stop_gradient_mu)
        _check_finite(loss, step, tag)
        for name, optimizer in optimizers.items():
            optimizer.update(targets[name], grads[name])
        history.append(loss)
        _log_progress(logger, run_id, tag, step, loss, cfg, {"mu_q": codec.mu, "scale": codec.scale})
    _check_convergence(history, cfg, tag)
    return JointResult(codec, history)


def laplace_codec(analysis_kind: str, seed: Seed, bound: float = LAPLACE_SCALE_BOUND) -> ToyCodec:
    """Codec for the Laplace experiment: affine transforms, or residual MLPs of width 32."""
    if analysis_kind == "linear":
        analysis = Mlp([1, 1], "identity")
        synthesis = Mlp([1, 1], "identity")
    elif analysis_kind == "nonlinear":
        analysis = Mlp([1, 32, 32, 32, 1], "softplus", residual=True, seed=seed.derive(1))
        synthesis = Mlp([1, 32, 32, 32, 1], "softplus", residual=True, seed=seed.derive(2))
    else:
        raise InvalidParameter(f"analysis_kind must be 'linear' or 'nonlinear', got {analysis_kind!r}")
    return ToyCodec(analysis, synthesis, family="laplace", bound=bound)


@dataclass
class RdPoint:
    analysis_kind: str
    rule: str
    lam: float
    rate_bits: float
    rate_se: float
    mse: float
    mse_se: float
    loss: float
    loss_se: float

    def to_dict(self) -> dict:
        return {
            "analysis": self.analysis_kind,
            "rule": self.rule,
            "lambda": self.lam,
            "rate_bits": self.rate_bits,
            "rate_se_bits": self.rate_se,
            "distortion_mse": self.mse,
            "distortion_se_mse": self.mse_se,
            "loss": self.loss,
            "loss_se": self.loss_se
        }


def train_laplace_rd(
    analysis_kind: str,
    backward_rule: str,
    lambda_grid: Sequence[float],
    cfg: TrainConfig,
    logger=None,
    run_id: Optional[str] = None,
    forward_label: str = "SR"
) -> List[RdPoint]:
    """
    Rate-distortion points on the standard Laplace source.

    For each lambda, trains a fresh codec (learned Laplace entropy model with
    scale bound LAPLACE_SCALE_BOUND) under stochastic rounding with the given
    backward rule, then evaluates it with rounding.
    """
    source = Laplace1D(0.0, 1.0)
    points = []
    for index, lam in enumerate(lambda_grid):
        point_cfg = replace(cfg, lam=float(lam), seed=cfg.seed.derive(index))
        codec = laplace_codec(analysis_kind, point_cfg.seed)
        train_joint(codec, source, forward_label, backward_rule, point_cfg, logger, run_id,
                    tag=f"laplace/{analysis_kind}/{backward_rule}/lambda={lam:g}")
        result = evaluate_codec(codec, source, cfg.n_eval, point_cfg.seed.derive(3), lam=float(lam))
        points.append(RdPoint(analysis_kind, backward_rule, float(lam), result.rate_bits, result.rate_se,
                              result.mse, result.mse_se, result.loss, result.loss_se))
    return points


@dataclass
class PostTrainResult:
    codec: ToyCodec
    before: CodecEval
    after: CodecEval


def post_train(
    codec: ToyCodec,
    source,
    cfg: TrainConfig,
    bound: float = POST_TRAIN_BOUND,
    logger=None,
    run_id: Optional[str] = None
) -> PostTrainResult:
    """
    Fine-tune synthesis and entropy model on rounded latents with a frozen analysis.

    The scale lower bound is switched to `bound` before fine-tuning. The input
    codec is left unchanged.
    """
    eval_seed = cfg.seed.derive(5)
    before = evaluate_codec(codec, source, cfg.n_eval, eval_seed, cfg.lam)
    tuned = codec.copy()
    tuned.bound = float(bound)
    train_joint(tuned, source, "ROUND", "STE", cfg, logger, run_id, train_analysis=False, tag="post-train")
    after = evaluate_codec(tuned, source, cfg.n_eval, eval_seed, cfg.lam)
    return PostTrainResult(tuned, before, after)


@dataclass
class SweepPoint:
    sigma_0: float
    joint: CodecEval
    post: CodecEval

    def to_dict(self) -> dict:
        return {
            "sigma_0": self.sigma_0,
            "joint_rate_bits": self.joint.rate_bits,
            "joint_mse": self.joint.mse,
            "joint_loss": self.joint.loss,
            "joint_loss_se": self.joint.loss_se,
            "post_rate_bits": self.post.rate_bits,
            "post_mse": self.post.mse,
            "post_loss": self.post.loss,
            "post_loss_se": self.post.loss_se
        }


def sweep_codec(seed: Seed, bound: float, hidden: Sequence[int] = (32, 32)) -> ToyCodec:
    """Affine analysis, MLP synthesis and a zero-mean learned Gaussian model."""
    analysis = Mlp([1, 1], "identity")
    synthesis = Mlp([1, *hidden, 1], "softplus", seed=seed.derive(2))
    return ToyCodec(analysis, synthesis, family="gaussian", bound=bound, learn_mu=False)


def lower_bound_sweep(
    sigma_0_values: Sequence[float],
    lam: float,
    cfg: TrainConfig,
    post_cfg: Optional[TrainConfig] = None,
    source=None,
    forward_label: str = "AUN",
    rule: str = "PGE",
    logger=None,
    run_id: Optional[str] = None
) -> List[SweepPoint]:
    """
    Joint training with each lower bound sigma_0, followed by post-training with
    sigma_0 = POST_TRAIN_BOUND. All bounds share the initial codec and data stream.
    """
    source = source or Laplace1D(0.0, 1.0)
    joint_cfg = replace(cfg, lam=float(lam))
    post_cfg = replace(post_cfg or replace(cfg, steps=max(cfg.steps // 4, 1)), lam=float(lam))
    points = []
    for sigma_0 in sigma_0_values:
        codec = sweep_codec(joint_cfg.seed, float(sigma_0))
        train_joint(codec, source, forward_label, rule, joint_cfg, logger, run_id, tag=f"sweep/sigma_0={sigma_0:g}")
        joint_eval = evaluate_codec(codec, source, joint_cfg.n_eval, joint_cfg.seed.derive(5), joint_cfg.lam)
        post = post_train(codec, source, post_cfg, POST_TRAIN_BOUND, logger, run_id)
        points.append(SweepPoint(float(sigma_0), joint_eval, post.after))
    return points


@dataclass
class ZeroCenterGrads:
    """Per-sample mu_q gradients of R + lam * D with and without the partial stop-gradient."""
    mean_sg: float
    var_sg: float
    mean_full: float
    var_full: float
    n: int


def zero_center_mu_grads(
    source: Gaussian1D,
    mu_q: float,
    sigma_q: float,
    alpha: float,
    lam: float,
    n: int,
    seed: Seed
) -> ZeroCenterGrads:
    """
    Compare the mu_q gradients of a zero-centre SUA latent under both routings.

    The loss per sample is R(ỹ) + lam * (y - ỹ)^2 with R from N(mu_q, sigma_q^2);
    the rate's explicit dependence on mu_q flows in both cases.
    """
    spec = SurrogateSpec(SurrogateKind.SUA, alpha=alpha)
    y = source.sample(seed.derive(0), n)
    u = seed.derive(1).generator().random(n) - 0.5
    model = GaussianEntropyModel(mu_q, sigma_q, 0.0)
    grads = {}
    for stop_gradient in (True, False):
        path = forward_zero_center_partial_sg(y, mu_q, spec, u, stop_gradient)
        d_value, d_mu, _ = rate_param_grads(model, path.value)
        through_value = d_value + 2.0 * lam * (path.value - y)
        grads[stop_gradient] = d_mu + through_value * path.d_mu
    return ZeroCenterGrads(
        mean_sg=compensated_mean(grads[True]), var_sg=float(np.var(grads[True], ddof=1)),
        mean_full=compensated_mean(grads[False]), var_full=float(np.var(grads[False], ddof=1)),
        n=int(n)
    )


def main():
    """Example usage of the tiny networks."""
    print("=" * 60)
    print("Tiny network demo")
    print("=" * 60)
    net = Mlp([1, 16, 16, 1], "softplus", seed=Seed(root=1))
    x = np.linspace(-2.0, 2.0, 32)[:, None]
    print(f"gradient check (max rel err): {gradient_check(net, x):.2e}")
    for label in ("ROUND", "AUN"):
        spec = SurrogateSpec.parse(label)
        print(f"Bayes distortion {label:5s} at N(0, 0.3^2): {bayes_distortion(spec, Gaussian1D(0.0, 0.3)):.5f}")
    cfg = TrainConfig(steps=2000, batch=128, n_eval=20000, hidden=(32, 32), seed=Seed(root=5))
    result = train_synthesis(SurrogateSpec(SurrogateKind.AUN), Gaussian1D(0.0, 0.3), cfg)
    print(f"AUN decoder: D_tilde {result.D_tilde:.5f}, D_round {result.D_round:.5f}, rel {result.delta_D_rel:+.3f}")
    grads = zero_center_mu_grads(Gaussian1D(0.3, 1.0), 0.3, 1.0, 8.0, 1.0, 50000, Seed(root=9))
    print(f"mu_q gradient variance: stop-gradient {grads.var_sg:.4f}, full {grads.var_full:.4f}")


if __name__ == "__main__":
    main()
