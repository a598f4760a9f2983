#!/usr/bin/env python3
"""
Gradient Estimators

Backward calculations through the quantization surrogates:

    STANDARD  exact gradient of a deterministic differentiable forward (SHA)
    PGE       pathwise estimator, dL/dỹ * dỹ/dy at the sampled noise
    STE       generalized straight-through, hard and denoising maps act as identity
    EP        exact gradient of the expected loss

plus the harness that measures bias and variance of an estimator against the
expected gradient, averaged over latent draws.
"""

import itertools
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence, Union

import numpy as np

from core.entropy_model import GaussianEntropyModel, rate_bits, rate_grad
from core.errors import DimensionTooLarge, InvalidParameter, UnsupportedForward
from core.numerics import DEFAULT_QUADRATURE, Quadrature, Seed, compensated_mean, integrate, integrate2d
from core.sources import Gaussian1D
from core.surrogates import (
    ANNEALED_KINDS,
    SurrogateKind,
    SurrogateSpec,
    ceil_probability,
    denoise_r,
    draw_noise,
    forward,
    forward_jacobian,
    sga_ceil_prob_grad,
    soft_fn,
    soft_fn_grad,
)


# Dimension limit of the brute-force expected gradient
BRUTEFORCE_MAX_DIM = 3

# Latent draws per cell in the rate-term harness
DEFAULT_N_Y = 1000


class EstimatorRule(str, Enum):
    STANDARD = "STANDARD"
    PGE = "PGE"
    STE = "STE"
    EP = "EP"


VALID_FORWARDS = {
    EstimatorRule.STANDARD: frozenset({SurrogateKind.SHA}),
    EstimatorRule.PGE: frozenset({
        SurrogateKind.AUN, SurrogateKind.SUA, SurrogateKind.SUA_N,
        SurrogateKind.UQ_S, SurrogateKind.UQ_I
    }),
    EstimatorRule.EP: frozenset({
        SurrogateKind.AUN, SurrogateKind.SUA, SurrogateKind.SUA_N,
        SurrogateKind.SR, SurrogateKind.SRA, SurrogateKind.SGA
    }),
    EstimatorRule.STE: frozenset({
        SurrogateKind.ROUND, SurrogateKind.SR, SurrogateKind.SRA, SurrogateKind.SGA,
        SurrogateKind.UQ_S, SurrogateKind.UQ_I, SurrogateKind.SUA
    }),
}

BRUTEFORCE_KINDS = frozenset({SurrogateKind.SR, SurrogateKind.SRA, SurrogateKind.AUN, SurrogateKind.SUA})


@dataclass(frozen=True)
class EstimatorSpec:
    """A backward rule paired with a forward calculation."""
    forward: SurrogateSpec
    rule: EstimatorRule
    samples_per_estimate: int = 1

    def __post_init__(self):
        object.__setattr__(self, "rule", EstimatorRule(self.rule))
        if self.samples_per_estimate < 1:
            raise UnsupportedForward(f"samples_per_estimate must be >= 1, got {self.samples_per_estimate}")
        if self.forward.kind not in VALID_FORWARDS[self.rule]:
            raise UnsupportedForward(
                f"{self.rule.value} cannot be paired with forward {self.forward.kind.value}"
            )

    @property
    def label(self) -> str:
        return f"{self.rule.value}/{self.forward.label}"


@dataclass(frozen=True)
class ScalarLoss:
    """A scalar loss L(t) and its derivative L'(t), both vectorized."""
    value: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    name: str = "loss"


@dataclass
class GradStats:
    """
    Bias and variance of one estimator.

    bias is the mean over latent draws of |E_noise[g] - g_ep|; abs_error is the
    mean of |g - g_ep| over draws and trials; mean_error is the signed mean of
    g - g_ep. variance is the per-latent variance of g averaged over latents.
    Every statistic carries its standard error over latent draws.
    """
    bias: float
    bias_se: float
    variance: float
    variance_se: float
    mean_error: float
    mean_error_se: float
    abs_error: float
    abs_error_se: float
    n_trials: int
    n_y: int
    g_ep: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "bias": self.bias,
            "bias_se": self.bias_se,
            "variance": self.variance,
            "variance_se": self.variance_se,
            "mean_error": self.mean_error,
            "mean_error_se": self.mean_error_se,
            "abs_error": self.abs_error,
            "abs_error_se": self.abs_error_se,
            "n_trials": self.n_trials,
            "n_y": self.n_y
        }


def grad_pge(spec: SurrogateSpec, loss_grad: Callable, y, noise):
    """
    Single-sample pathwise gradient dL/dỹ(ỹ) * dỹ/dy at the given noise.

    UQ kinds treat their inner rounding straight-through.
    """
    if spec.kind not in VALID_FORWARDS[EstimatorRule.PGE]:
        raise UnsupportedForward(f"PGE needs a reparameterized forward, got {spec.kind.value}")
    y_tilde = forward(spec, y, noise)
    return np.asarray(loss_grad(y_tilde)) * np.asarray(forward_jacobian(spec, y, noise))


def grad_ste(spec: SurrogateSpec, loss_grad: Callable, y, noise=None):
    """
    Generalized straight-through gradient.

    Rounding, stochastic rounding and the denoiser r_alpha act as identity;
    the soft function s_alpha keeps its derivative (SUA, SRA).
    """
    if spec.kind not in VALID_FORWARDS[EstimatorRule.STE]:
        raise UnsupportedForward(f"STE cannot be paired with forward {spec.kind.value}")
    y_tilde = forward(spec, y, noise)
    upstream = np.asarray(loss_grad(y_tilde))
    if spec.kind in ANNEALED_KINDS:
        return upstream * np.asarray(soft_fn_grad(y, spec.alpha))
    return upstream * np.ones_like(np.asarray(y, dtype=float))


def grad_standard(spec: SurrogateSpec, loss_grad: Callable, y):
    if spec.kind != SurrogateKind.SHA:
        raise UnsupportedForward(f"Standard gradient needs a deterministic differentiable forward, got {spec.kind.value}")
    y = np.asarray(y, dtype=float)
    return np.asarray(loss_grad(soft_fn(y, spec.alpha))) * np.asarray(soft_fn_grad(y, spec.alpha))


def grad_ep_scalar(loss: Callable, y):
    """d/dy E_U[L(y + U)] = L(y + 0.5) - L(y - 0.5)."""
    y = np.asarray(y, dtype=float)
    return _as_output(np.asarray(loss(y + 0.5)) - np.asarray(loss(y - 0.5)))


def grad_ep_rate_sua(y, alpha: float, rate_fn: Callable):
    """Expected gradient of a separable rate term under SUA."""
    y = np.asarray(y, dtype=float)
    s = np.asarray(soft_fn(y, alpha))
    upper = np.asarray(rate_fn(np.asarray(denoise_r(s + 0.5, alpha))))
    lower = np.asarray(rate_fn(np.asarray(denoise_r(s - 0.5, alpha))))
    return _as_output(np.asarray(soft_fn_grad(y, alpha)) * (upper - lower))


def grad_ep_rate_sra(y, alpha: float, rate_fn: Callable):
    """Expected gradient of a separable rate term under SRA; zero at integers."""
    y = np.asarray(y, dtype=float)
    jump = np.asarray(rate_fn(np.ceil(y))) - np.asarray(rate_fn(np.floor(y)))
    return _as_output(np.asarray(soft_fn_grad(y, alpha)) * jump)


def grad_ep_rate(spec: SurrogateSpec, y, rate_fn: Callable):
    """
    Expected gradient of a separable term R(ỹ) for the given forward.

    Args:
        spec: Forward calculation
        y: Latent values (any shape, evaluated componentwise)
        rate_fn: Vectorized per-component term R

    Returns:
        d/dy E[R(ỹ)] with the shape of y
    """
    y = np.asarray(y, dtype=float)
    kind = spec.kind
    if kind == SurrogateKind.ROUND:
        return _as_output(np.zeros_like(y))
    if kind == SurrogateKind.AUN:
        return grad_ep_scalar(rate_fn, y)
    if kind == SurrogateKind.SUA:
        return grad_ep_rate_sua(y, spec.alpha, rate_fn)
    if kind == SurrogateKind.SUA_N:
        s = np.asarray(soft_fn(y, spec.alpha))
        jump = np.asarray(rate_fn(s + 0.5)) - np.asarray(rate_fn(s - 0.5))
        return _as_output(np.asarray(soft_fn_grad(y, spec.alpha)) * jump)
    if kind == SurrogateKind.SRA:
        return grad_ep_rate_sra(y, spec.alpha, rate_fn)
    if kind == SurrogateKind.SR:
        return _as_output(np.asarray(rate_fn(np.ceil(y))) - np.asarray(rate_fn(np.floor(y))))
    if kind == SurrogateKind.SGA:
        floor = np.floor(y)
        jump = np.asarray(rate_fn(floor + 1.0)) - np.asarray(rate_fn(floor))
        return _as_output(np.asarray(sga_ceil_prob_grad(y, spec.tau)) * jump)
    raise UnsupportedForward(f"No separable expected gradient for {kind.value}")


def grad_ep_vector_bruteforce(
    loss: Callable[[np.ndarray], np.ndarray],
    y,
    spec: SurrogateSpec,
    q: Quadrature = DEFAULT_QUADRATURE
) -> np.ndarray:
    """
    Reference expected gradient of a non-separable loss.

    SR and SRA enumerate all 2^d rounding corners; AUN and SUA integrate the
    noise of the other components by (nested) quadrature.

    Args:
        loss: Vectorized loss over arrays shaped (..., d)
        y: Latent vector of dimension d <= 3
        spec: Forward calculation (SR, SRA, AUN or SUA)
        q: Quadrature used for the noise of the other components

    Returns:
        Gradient vector of shape (d,)
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    d = y.size
    if d > BRUTEFORCE_MAX_DIM:
        raise DimensionTooLarge(f"Brute-force expected gradient supports d <= {BRUTEFORCE_MAX_DIM}, got {d}")
    if spec.kind not in BRUTEFORCE_KINDS:
        raise UnsupportedForward(f"Brute-force expected gradient does not support {spec.kind.value}")

    if spec.kind in (SurrogateKind.SR, SurrogateKind.SRA):
        return _bruteforce_rounding(loss, y, spec)

    grad = np.zeros(d)
    for i in range(d):
        others = [j for j in range(d) if j != i]
        if spec.kind == SurrogateKind.AUN:
            upper_i, lower_i, scale = y[i] + 0.5, y[i] - 0.5, 1.0
        else:
            s_i = float(soft_fn(y[i], spec.alpha))
            upper_i = float(denoise_r(s_i + 0.5, spec.alpha))
            lower_i = float(denoise_r(s_i - 0.5, spec.alpha))
            scale = float(soft_fn_grad(y[i], spec.alpha))

        def difference(u_others: np.ndarray, i=i, others=others, upper_i=upper_i, lower_i=lower_i) -> np.ndarray:
            m = u_others.shape[0]
            point = np.empty((m, d))
            for column, j in enumerate(others):
                point[:, j] = _noisy_component(spec, y[j], u_others[:, column])
            point[:, i] = upper_i
            high = np.asarray(loss(point), dtype=float)
            point[:, i] = lower_i
            low = np.asarray(loss(point), dtype=float)
            return high - low

        grad[i] = scale * _expect_over_noise(difference, [y[j] for j in others], spec, q)
    return grad


def _noisy_component(spec: SurrogateSpec, y_j: float, u: np.ndarray) -> np.ndarray:
    if spec.kind == SurrogateKind.AUN:
        return y_j + u
    return np.asarray(denoise_r(float(soft_fn(y_j, spec.alpha)) + u, spec.alpha))


def _noise_breaks(spec: SurrogateSpec, y_j: float) -> Optional[Sequence[float]]:
    """Noise values where r_alpha(s_alpha(y_j) + u) is steepest."""
    if spec.kind != SurrogateKind.SUA:
        return None
    s = float(soft_fn(y_j, spec.alpha))
    return [k + 0.5 - s for k in (math.floor(s) - 1, math.floor(s), math.floor(s) + 1)]


def _expect_over_noise(g: Callable[[np.ndarray], np.ndarray], y_others, spec: SurrogateSpec, q: Quadrature) -> float:
    if not y_others:
        return float(g(np.zeros((1, 0)))[0])
    if len(y_others) == 1:
        return integrate(lambda u: g(u[:, None]), -0.5, 0.5, q, _noise_breaks(spec, y_others[0]))

    def pair(a: np.ndarray, b: np.ndarray) -> np.ndarray:
        a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
        return g(np.stack([a.ravel(), b.ravel()], axis=-1)).reshape(a.shape)

    breaks = (_noise_breaks(spec, y_others[0]), _noise_breaks(spec, y_others[1]))
    return integrate2d(pair, ((-0.5, 0.5), (-0.5, 0.5)), q, breaks)


def _bruteforce_rounding(loss: Callable, y: np.ndarray, spec: SurrogateSpec) -> np.ndarray:
    d = y.size
    low = np.floor(y)
    high = np.ceil(y)
    p_high = np.asarray(ceil_probability(spec, y), dtype=float).reshape(d)
    slope = np.ones(d) if spec.kind == SurrogateKind.SR else np.asarray(soft_fn_grad(y, spec.alpha)).reshape(d)

    grad = np.zeros(d)
    for i in range(d):
        others = [j for j in range(d) if j != i]
        total = []
        for bits in itertools.product((0, 1), repeat=len(others)):
            weight = 1.0
            corner = np.empty(d)
            for j, bit in zip(others, bits):
                corner[j] = high[j] if bit else low[j]
                weight *= p_high[j] if bit else 1.0 - p_high[j]
            corner[i] = high[i]
            upper = float(np.asarray(loss(corner[None, :]))[0])
            corner[i] = low[i]
            lower = float(np.asarray(loss(corner[None, :]))[0])
            total.append(weight * (upper - lower))
        grad[i] = slope[i] * math.fsum(total)
    return grad


def expected_gradient(est: EstimatorSpec, loss: ScalarLoss, y):
    """Reference gradient g_ep of E[L(ỹ)] for a separable scalar loss."""
    spec = est.forward
    if spec.kind == SurrogateKind.SHA:
        return grad_standard(spec, loss.grad, y)
    return grad_ep_rate(spec, y, loss.value)


def estimate(est: EstimatorSpec, loss: ScalarLoss, y, noise=None):
    """
    One gradient estimate per latent.

    Args:
        est: Estimator and forward
        loss: Scalar loss
        y: Latents of shape (..., samples_per_estimate, 1)
        noise: Noise draw for the forward at that shape

    Returns:
        Estimates averaged over the samples axis, shape (...)
    """
    spec = est.forward
    if est.rule == EstimatorRule.STANDARD:
        g = grad_standard(spec, loss.grad, y)
    elif est.rule == EstimatorRule.EP:
        g = grad_ep_rate(spec, y, loss.value)
    elif est.rule == EstimatorRule.PGE:
        g = grad_pge(spec, loss.grad, y, noise)
    else:
        g = grad_ste(spec, loss.grad, y, noise)
    return np.asarray(g).reshape(np.shape(y))[..., 0].mean(axis=-1)


def measure_grad_stats(
    est: EstimatorSpec,
    loss: ScalarLoss,
    y_distribution: Union[Gaussian1D, Sequence[float], np.ndarray],
    n_trials: int,
    seed: Seed,
    n_y: int = DEFAULT_N_Y
) -> GradStats:
    """
    Measure bias and variance of an estimator on a separable scalar loss.

    Every latent draw gets its own derived noise stream, so results do not
    depend on evaluation order.

    Args:
        est: Estimator under test
        loss: Per-component loss and its derivative
        y_distribution: Source to draw n_y latents from, or explicit latent values
        n_trials: Gradient estimates per latent
        seed: Root stream
        n_y: Number of latent draws when y_distribution is a source

    Returns:
        GradStats with standard errors over latent draws
    """
    if n_trials < 2:
        raise InvalidParameter(f"measure_grad_stats needs n_trials >= 2, got {n_trials}")
    if isinstance(y_distribution, Gaussian1D):
        y_values = y_distribution.sample(seed.derive(0), n_y)
    else:
        y_values = np.asarray(y_distribution, dtype=float).ravel()

    g_ep = np.asarray(expected_gradient(est, loss, y_values), dtype=float).reshape(y_values.shape)
    m = est.samples_per_estimate
    bias_k = np.empty(y_values.size)
    var_k = np.empty(y_values.size)
    err_k = np.empty(y_values.size)
    abs_k = np.empty(y_values.size)

    for k, y_k in enumerate(y_values):
        y_block = np.full((n_trials, m, 1), y_k)
        generator = seed.derive(1, k).generator()
        noise = draw_noise(est.forward, y_block.shape, generator)
        g = estimate(est, loss, y_block, noise)
        mean_g = compensated_mean(g)
        bias_k[k] = abs(mean_g - g_ep[k])
        var_k[k] = math.fsum(((g - mean_g) ** 2).tolist()) / (n_trials - 1)
        err_k[k] = mean_g - g_ep[k]
        abs_k[k] = compensated_mean(np.abs(g - g_ep[k]))

    return GradStats(
        bias=compensated_mean(bias_k), bias_se=_standard_error(bias_k),
        variance=compensated_mean(var_k), variance_se=_standard_error(var_k),
        mean_error=compensated_mean(err_k), mean_error_se=_standard_error(err_k),
        abs_error=compensated_mean(abs_k), abs_error_se=_standard_error(abs_k),
        n_trials=int(n_trials), n_y=int(y_values.size), g_ep=g_ep
    )


def rate_loss(model: GaussianEntropyModel) -> ScalarLoss:
    """Rate term R(t) = -log2 q(t) of a Gaussian entropy model as a ScalarLoss."""
    return ScalarLoss(
        value=lambda t: rate_bits(model, t),
        grad=lambda t: rate_grad(model, t),
        name=f"rate(mu_q={model.mu_q:g}, sigma_q={model.sigma_q:g})"
    )


def rate_term_stats(
    rule: Union[str, EstimatorRule],
    kind: Union[str, SurrogateKind],
    alpha: Optional[float],
    sigma_q: float,
    n_y: int,
    n_trials: int,
    seed: Seed,
    tau: Optional[float] = None
) -> GradStats:
    """
    Bias and variance of the rate-term gradient for one (rule, forward, sigma_q) cell.

    Latents are drawn from the entropy model itself, y ~ N(0, sigma_q^2), and
    the loss is R(t) = -log2 q(t) under N(0, sigma_q^2) with no lower bound.
    """
    spec = SurrogateSpec(SurrogateKind(kind), alpha=alpha, tau=tau)
    est = EstimatorSpec(spec, EstimatorRule(rule))
    model = GaussianEntropyModel(0.0, sigma_q, 0.0)
    return measure_grad_stats(est, rate_loss(model), Gaussian1D(0.0, sigma_q), n_trials, seed, n_y=n_y)


def _standard_error(values: np.ndarray) -> float:
    if values.size < 2:
        return 0.0
    return float(np.std(values, ddof=1) / math.sqrt(values.size))


def _as_output(value: np.ndarray):
    value = np.asarray(value, dtype=float)
    return float(value) if value.ndim == 0 else value


def main():
    """Example usage of the gradient estimators."""
    print("=" * 60)
    print("Gradient estimators demo")
    print("=" * 60)
    square = ScalarLoss(value=lambda t: np.asarray(t) ** 2, grad=lambda t: 2.0 * np.asarray(t), name="square")
    aun = SurrogateSpec(SurrogateKind.AUN)
    print(f"PGE/AUN, y=1, u=0.25         -> {grad_pge(aun, square.grad, 1.0, 0.25):.4f}")
    print(f"EP (AUN), y=1                -> {grad_ep_scalar(square.value, 1.0):.4f}")
    print(f"EP (SRA5), y=0.3             -> {grad_ep_rate_sra(0.3, 5.0, square.value):.6f}")
    print(f"Brute force 2-dim AUN        -> {grad_ep_vector_bruteforce(lambda p: np.sum(p ** 2, axis=-1), [0.2, -0.4], aun)}")
    print()
    for rule, kind, alpha in [("PGE", "AUN", None), ("PGE", "SUA", 5.0), ("STE", "SUA", 5.0), ("STE", "SR", None)]:
        stats = rate_term_stats(rule, kind, alpha, 0.3, n_y=200, n_trials=200, seed=Seed(root=11))
        print(f"{rule}/{kind}{'' if alpha is None else int(alpha):<3} sigma_q=0.3: "
              f"bias {stats.bias:.3f} +/- {stats.bias_se:.3f}, var {stats.variance:.3f} +/- {stats.variance_se:.3f}")


if __name__ == "__main__":
    main()
