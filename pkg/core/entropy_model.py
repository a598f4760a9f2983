#!/usr/bin/env python3
"""
Entropy Models and Rate Estimation

CDF-based probability models for a scalar latent with a lower bound on the
scale parameter, the rate of rounding and of every surrogate under such a
model, rate-error surfaces over the model parameters, the two-dimensional
conditional-model rate study, and zero-centre quantization.

The probability assigned to a value t is q(t) = c(t + 0.5) - c(t - 0.5) where
c is the model CDF with its scale clamped below by the lower bound. The rate
is -log2 q(t) in bits, with q floored at PROB_FLOOR.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import optimize

from core.errors import InvalidParameter, UnsupportedMethod
from core.numerics import (
    DEFAULT_QUADRATURE,
    TAIL_SIGMAS,
    Quadrature,
    Seed,
    compensated_mean,
    compensated_sum,
    integrate,
    normal_interval_mass,
    std_normal_pdf,
)
from core.sources import Gaussian1D, Gaussian2D, Laplace1D
from core.surrogates import (
    SurrogateKind,
    SurrogateSpec,
    ceil_probability,
    denoise_r,
    draw_noise,
    forward,
    round_half,
    soft_fn,
    soft_inv,
)


PROB_FLOOR = 2.0 ** -64
LOG2 = math.log(2.0)

DEFAULT_MC_SAMPLES = 10 ** 6
DEFAULT_MU_POINTS = 21
DEFAULT_SIGMA_GRID = tuple(np.round(np.linspace(0.05, 1.0, 20), 10))

QUADRATURE_KINDS = frozenset({
    SurrogateKind.ROUND, SurrogateKind.SHA, SurrogateKind.AUN, SurrogateKind.SUA,
    SurrogateKind.SUA_N, SurrogateKind.SR, SurrogateKind.SRA, SurrogateKind.SGA
})

# Laplace integration windows are truncated at location +/- LAPLACE_TAIL_SCALES * scale
LAPLACE_TAIL_SCALES = 40.0


@dataclass(frozen=True)
class GaussianEntropyModel:
    """Gaussian CDF model with mean mu_q, scale sigma_q and lower bound sigma_0."""
    mu_q: float = 0.0
    sigma_q: float = 1.0
    sigma_0: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.mu_q):
            raise InvalidParameter(f"GaussianEntropyModel mu_q must be finite, got {self.mu_q}")
        if not self.sigma_q > 0:
            raise InvalidParameter(f"GaussianEntropyModel sigma_q must be > 0, got {self.sigma_q}")
        if not self.sigma_0 >= 0:
            raise InvalidParameter(f"GaussianEntropyModel sigma_0 must be >= 0, got {self.sigma_0}")

    @property
    def scale(self) -> float:
        """Effective scale max(sigma_q, sigma_0)."""
        return max(self.sigma_q, self.sigma_0)

    @property
    def clamped(self) -> bool:
        return self.sigma_q < self.sigma_0

    def to_dict(self) -> dict:
        return {"family": "gaussian", "mu_q": self.mu_q, "sigma_q": self.sigma_q, "sigma_0": self.sigma_0}


@dataclass(frozen=True)
class LaplacianEntropyModel:
    """Laplace CDF model with location mu_q, scale b_q and lower bound b_0."""
    mu_q: float = 0.0
    b_q: float = 1.0
    b_0: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.mu_q):
            raise InvalidParameter(f"LaplacianEntropyModel mu_q must be finite, got {self.mu_q}")
        if not self.b_q > 0:
            raise InvalidParameter(f"LaplacianEntropyModel b_q must be > 0, got {self.b_q}")
        if not self.b_0 >= 0:
            raise InvalidParameter(f"LaplacianEntropyModel b_0 must be >= 0, got {self.b_0}")

    @property
    def scale(self) -> float:
        return max(self.b_q, self.b_0)

    @property
    def clamped(self) -> bool:
        return self.b_q < self.b_0

    def to_dict(self) -> dict:
        return {"family": "laplace", "mu_q": self.mu_q, "b_q": self.b_q, "b_0": self.b_0}


EntropyModel = Union[GaussianEntropyModel, LaplacianEntropyModel]


def _gaussian_mass(value, mu, scale):
    value = np.asarray(value, dtype=float)
    lo = (value - 0.5 - mu) / scale
    hi = (value + 0.5 - mu) / scale
    return np.asarray(normal_interval_mass(lo, hi))


def _laplace_mass(value, mu, scale):
    value = np.asarray(value, dtype=float)
    lo = (value - 0.5 - mu) / scale
    hi = (value + 0.5 - mu) / scale
    right = 0.5 * (np.exp(-np.maximum(lo, 0.0)) - np.exp(-np.maximum(hi, 0.0)))
    left = 0.5 * (np.exp(np.minimum(hi, 0.0)) - np.exp(np.minimum(lo, 0.0)))
    middle = 1.0 - 0.5 * np.exp(np.minimum(lo, 0.0)) - 0.5 * np.exp(-np.maximum(hi, 0.0))
    mass = np.where(lo >= 0, right, np.where(hi <= 0, left, middle))
    return np.maximum(mass, 0.0)


def _raw_mass(model: EntropyModel, value):
    if isinstance(model, GaussianEntropyModel):
        return _gaussian_mass(value, model.mu_q, model.scale)
    return _laplace_mass(value, model.mu_q, model.scale)


def prob_mass(model: EntropyModel, value):
    """q(value) = c(value + 0.5) - c(value - 0.5), floored at PROB_FLOOR."""
    mass = np.maximum(_raw_mass(model, value), PROB_FLOOR)
    return float(mass) if mass.ndim == 0 else mass


def rate_bits(model: EntropyModel, value):
    """-log2 q(value) in bits."""
    bits = -np.log2(np.maximum(_raw_mass(model, value), PROB_FLOOR))
    return float(bits) if bits.ndim == 0 else bits


def _mass_grads(model: EntropyModel, value):
    """(q, dq/dvalue, dq/dscale) with the unclamped mass."""
    value = np.asarray(value, dtype=float)
    scale = model.scale
    a = (value - 0.5 - model.mu_q) / scale
    b = (value + 0.5 - model.mu_q) / scale
    if isinstance(model, GaussianEntropyModel):
        mass = _gaussian_mass(value, model.mu_q, scale)
        dens_a, dens_b = np.asarray(std_normal_pdf(a)), np.asarray(std_normal_pdf(b))
    else:
        mass = _laplace_mass(value, model.mu_q, scale)
        dens_a, dens_b = 0.5 * np.exp(-np.abs(a)), 0.5 * np.exp(-np.abs(b))
    d_value = (dens_b - dens_a) / scale
    d_scale = -(dens_b * b - dens_a * a) / scale
    return mass, d_value, d_scale


def rate_param_grads(model: EntropyModel, value):
    """
    Derivatives of -log2 q(value) with respect to value, mu_q and the scale parameter.

    The scale derivative is zero where the lower bound is active; all
    derivatives are zero where q is floored.

    Returns:
        (d_value, d_mu, d_scale), each with the shape of value
    """
    mass, dq_value, dq_scale = _mass_grads(model, value)
    live = mass > PROB_FLOOR
    factor = np.where(live, -1.0 / (np.where(live, mass, 1.0) * LOG2), 0.0)
    d_value = factor * dq_value
    d_scale = factor * dq_scale if not model.clamped else np.zeros_like(d_value)
    return d_value, -d_value, d_scale


def rate_grad(model: EntropyModel, value):
    """d/dvalue of -log2 q(value)."""
    d_value = rate_param_grads(model, value)[0]
    return float(d_value) if np.ndim(d_value) == 0 else d_value


def zero_center_quantize(y, mu_q):
    """ŷ = round(y - mu_q) + mu_q."""
    result = np.asarray(round_half(np.asarray(y, dtype=float) - mu_q)) + mu_q
    return float(result) if np.ndim(result) == 0 else result


# -- expected rate -----------------------------------------------------------

def integration_window(source) -> Tuple[float, float]:
    """Truncated support of a scalar source widened by one unit on each side."""
    if isinstance(source, Gaussian1D):
        lo, hi = source.support(TAIL_SIGMAS)
    elif isinstance(source, Laplace1D):
        lo, hi = source.support(LAPLACE_TAIL_SCALES)
    else:
        raise InvalidParameter(f"Expected a scalar source, got {type(source).__name__}")
    return lo - 1.0, hi + 1.0


def source_mass(source, lo, hi):
    """P(lo < Y < hi) for a scalar source, vectorized."""
    if isinstance(source, Gaussian1D):
        return np.asarray(normal_interval_mass(
            (np.asarray(lo, dtype=float) - source.mu) / source.sigma,
            (np.asarray(hi, dtype=float) - source.mu) / source.sigma
        ))
    return np.maximum(np.asarray(source.cdf(hi)) - np.asarray(source.cdf(lo)), 0.0)


def source_center(source) -> float:
    return source.mu if isinstance(source, Gaussian1D) else source.location


def half_integers(lo: float, hi: float) -> List[float]:
    return [k + 0.5 for k in range(math.floor(lo) - 1, math.ceil(hi) + 1)]


def integers(lo: float, hi: float) -> List[float]:
    return [float(k) for k in range(math.floor(lo), math.ceil(hi) + 1)]


def rounding_bin_masses(source) -> Tuple[np.ndarray, np.ndarray]:
    """Bins n and masses P(round(Y) = n) over the integration window."""
    lo, hi = integration_window(source)
    bins = np.arange(math.floor(lo), math.ceil(hi) + 1, dtype=float)
    return bins, source_mass(source, bins - 0.5, bins + 0.5)


def stochastic_bin_masses(spec: SurrogateSpec, source, q: Quadrature = DEFAULT_QUADRATURE) -> Tuple[np.ndarray, np.ndarray]:
    """
    Bins n and masses P(Ỹ = n) for SR, SRA and SGA.

    Each unit interval [k, k + 1] sends the mass of p(y) P(ceil | y) to k + 1
    and the rest to k.
    """
    lo, hi = integration_window(source)
    first, last = math.floor(lo), math.ceil(hi)
    bins = np.arange(first, last + 1, dtype=float)
    masses = np.zeros(bins.size)

    def to_ceil(y: np.ndarray) -> np.ndarray:
        return np.asarray(source.pdf(y)) * np.asarray(ceil_probability(spec, y))

    for index, k in enumerate(range(first, last)):
        k = float(k)
        up = integrate(to_ceil, k, k + 1.0, q, [k + 0.5])
        total = float(source_mass(source, k, k + 1.0))
        masses[index] += max(total - up, 0.0)
        masses[index + 1] += up
    return bins, masses


def soft_noise_density(source, alpha: float):
    """Density of z = s_alpha(Y) + U."""
    def density(z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return source_mass(source, np.asarray(soft_inv(z - 0.5, alpha)), np.asarray(soft_inv(z + 0.5, alpha)))
    return density


def expected_rate(
    spec: SurrogateSpec,
    source,
    model: EntropyModel,
    method: str = "quadrature",
    n_mc: int = DEFAULT_MC_SAMPLES,
    seed: Optional[Seed] = None,
    q: Quadrature = DEFAULT_QUADRATURE,
    zero_center: bool = False
) -> float:
    """
    Expected rate E[-log2 q(ỹ)] in bits.

    Args:
        spec: Forward calculation
        source: Law of the latent Y (Gaussian1D or Laplace1D)
        model: Entropy model evaluated at ỹ
        method: "quadrature" or "monte-carlo"
        n_mc: Sample count for Monte Carlo
        seed: Stream for Monte Carlo
        q: Quadrature rule
        zero_center: Quantize y - mu_q and add mu_q back

    Raises:
        UnsupportedMethod: quadrature requested for a UQ kind
    """
    if method == "monte-carlo":
        if seed is None:
            raise InvalidParameter("Monte Carlo rate needs a seed")
        return monte_carlo_rate(spec, source, model, n_mc, seed, zero_center)[0]
    if method != "quadrature":
        raise UnsupportedMethod(f"Unknown rate method {method!r}")
    if spec.kind not in QUADRATURE_KINDS:
        raise UnsupportedMethod(f"Quadrature rate is not available for {spec.kind.value}; use monte-carlo")

    if zero_center:
        source = _shift_source(source, -model.mu_q)
        model = replace(model, mu_q=0.0)

    lo, hi = integration_window(source)
    kind = spec.kind

    if kind == SurrogateKind.ROUND:
        bins, masses = rounding_bin_masses(source)
        return compensated_sum(masses * np.asarray(rate_bits(model, bins)))

    if kind == SurrogateKind.AUN:
        def integrand(t: np.ndarray) -> np.ndarray:
            return source_mass(source, t - 0.5, t + 0.5) * np.asarray(rate_bits(model, t))
        return integrate(integrand, lo, hi, q, [source_center(source) - 0.5, source_center(source) + 0.5])

    if kind == SurrogateKind.SHA:
        def integrand(y: np.ndarray) -> np.ndarray:
            return np.asarray(source.pdf(y)) * np.asarray(rate_bits(model, soft_fn(y, spec.alpha)))
        return integrate(integrand, lo, hi, q, integers(lo, hi))

    if kind in (SurrogateKind.SUA, SurrogateKind.SUA_N):
        density = soft_noise_density(source, spec.alpha)
        z_lo, z_hi = float(soft_fn(lo, spec.alpha)) - 0.5, float(soft_fn(hi, spec.alpha)) + 0.5

        def integrand(z: np.ndarray) -> np.ndarray:
            value = np.asarray(denoise_r(z, spec.alpha)) if kind == SurrogateKind.SUA else z
            return density(z) * np.asarray(rate_bits(model, value))
        return integrate(integrand, z_lo, z_hi, q, half_integers(z_lo, z_hi))

    bins, masses = stochastic_bin_masses(spec, source, q)
    return compensated_sum(masses * np.asarray(rate_bits(model, bins)))


def monte_carlo_rate(
    spec: SurrogateSpec,
    source,
    model: EntropyModel,
    n: int,
    seed: Seed,
    zero_center: bool = False
) -> Tuple[float, float]:
    """Monte Carlo estimate of the expected rate; returns (bits, standard error)."""
    if n < 2:
        raise InvalidParameter(f"Monte Carlo rate needs n >= 2, got {n}")
    y = source.sample(seed.derive(0), n)[:, None]
    offset = model.mu_q if zero_center else 0.0
    noise = draw_noise(spec, y.shape, seed.derive(1).generator())
    y_tilde = np.asarray(forward(spec, y - offset, noise)).ravel() + offset
    bits = np.asarray(rate_bits(model, y_tilde))
    return compensated_mean(bits), float(np.std(bits, ddof=1) / math.sqrt(n))


def _shift_source(source, offset: float):
    if isinstance(source, Gaussian1D):
        return Gaussian1D(source.mu + offset, source.sigma)
    if isinstance(source, Laplace1D):
        return Laplace1D(source.location + offset, source.scale)
    raise InvalidParameter(f"Cannot shift source {type(source).__name__}")


# -- rate surfaces -----------------------------------------------------------

@dataclass
class RateSurface:
    """
    Rate estimation error over a grid of Gaussian model parameters.

    delta_R[i, j] = R(Ỹ) - R(round(Y)) at mu_q = mu_grid[i], sigma_q = sigma_grid[j].
    q_star minimizes R(Ỹ) (grid argmin refined in sigma_q).
    """
    spec: SurrogateSpec
    source: Gaussian1D
    mu_grid: np.ndarray
    sigma_grid: np.ndarray
    rate: np.ndarray
    rate_round: np.ndarray
    delta_R: np.ndarray
    q_star: Tuple[float, float]
    q_star_rate: float
    sigma_0: float = 0.0
    method: str = "quadrature"
    rate_se: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def distance(self) -> float:
        """Euclidean distance between q* and the source parameters (mu, sigma)."""
        return math.hypot(self.q_star[0] - self.source.mu, self.q_star[1] - self.source.sigma)

    @property
    def max_abs_delta(self) -> float:
        return float(np.max(np.abs(self.delta_R)))

    def rows(self) -> List[dict]:
        out = []
        for i, mu_q in enumerate(self.mu_grid):
            for j, sigma_q in enumerate(self.sigma_grid):
                out.append({
                    "mu_q": float(mu_q),
                    "sigma_q": float(sigma_q),
                    "rate_bits": float(self.rate[i, j]),
                    "rate_round_bits": float(self.rate_round[i, j]),
                    "delta_R_bits": float(self.delta_R[i, j]),
                    "rate_se_bits": 0.0 if self.rate_se is None else float(self.rate_se[i, j])
                })
        return out


def default_mu_grid(source: Gaussian1D, points: int = DEFAULT_MU_POINTS) -> np.ndarray:
    return source.mu + np.linspace(-0.5, 0.5, points)


def rate_surface(
    spec: SurrogateSpec,
    source: Gaussian1D,
    mu_grid: Optional[Sequence[float]] = None,
    sigma_grid: Optional[Sequence[float]] = None,
    sigma_0: float = 0.0,
    method: str = "auto",
    n_mc: int = DEFAULT_MC_SAMPLES,
    seed: Optional[Seed] = None,
    q: Quadrature = DEFAULT_QUADRATURE,
    threads: int = 1,
    zero_center: bool = False
) -> RateSurface:
    """
    Tabulate ΔR over (mu_q, sigma_q) and locate the rate-minimizing model q*.

    method "auto" uses quadrature where available and Monte Carlo otherwise.
    Grid points are independent and evaluated on `threads` workers in index order.
    """
    mu_grid = default_mu_grid(source) if mu_grid is None else np.asarray(mu_grid, dtype=float)
    sigma_grid = np.asarray(DEFAULT_SIGMA_GRID if sigma_grid is None else sigma_grid, dtype=float)
    if mu_grid.size == 0 or sigma_grid.size == 0:
        raise InvalidParameter("rate_surface needs non-empty grids")
    if method == "auto":
        method = "quadrature" if spec.kind in QUADRATURE_KINDS else "monte-carlo"
    if method == "monte-carlo" and seed is None:
        raise InvalidParameter("Monte Carlo rate surface needs a seed")
    rounding = SurrogateSpec(SurrogateKind.ROUND)

    def evaluate(index: Tuple[int, int]) -> Tuple[float, float, float]:
        i, j = index
        model = GaussianEntropyModel(float(mu_grid[i]), float(sigma_grid[j]), sigma_0)
        base = expected_rate(rounding, source, model, q=q, zero_center=zero_center)
        if method == "monte-carlo":
            bits, se = monte_carlo_rate(spec, source, model, n_mc, seed.derive(i, j), zero_center)
        else:
            bits, se = expected_rate(spec, source, model, q=q, zero_center=zero_center), 0.0
        return bits, base, se

    indices = [(i, j) for i in range(mu_grid.size) for j in range(sigma_grid.size)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(evaluate, indices))
    else:
        results = [evaluate(index) for index in indices]

    shape = (mu_grid.size, sigma_grid.size)
    rate = np.array([r[0] for r in results]).reshape(shape)
    rate_round = np.array([r[1] for r in results]).reshape(shape)
    rate_se = np.array([r[2] for r in results]).reshape(shape)

    i_star, j_star = np.unravel_index(int(np.argmin(rate)), shape)
    mu_star = float(mu_grid[i_star])
    sigma_star, best = float(sigma_grid[j_star]), float(rate[i_star, j_star])

    if method == "quadrature" and sigma_grid.size > 1:
        lower = float(sigma_grid[max(j_star - 1, 0)])
        upper = float(sigma_grid[min(j_star + 1, sigma_grid.size - 1)])
        refined = optimize.minimize_scalar(
            lambda s: expected_rate(spec, source, GaussianEntropyModel(mu_star, s, sigma_0), q=q, zero_center=zero_center),
            bounds=(lower, upper),
            method="bounded",
            options={"xatol": 1e-6}
        )
        if refined.success and float(refined.fun) <= best:
            sigma_star, best = float(refined.x), float(refined.fun)

    return RateSurface(
        spec=spec, source=source, mu_grid=mu_grid, sigma_grid=sigma_grid,
        rate=rate, rate_round=rate_round, delta_R=rate - rate_round,
        q_star=(mu_star, sigma_star), q_star_rate=best, sigma_0=sigma_0, method=method,
        rate_se=rate_se if method == "monte-carlo" else None
    )


# -- two-dimensional conditional rate ----------------------------------------

RATE_2D_KINDS = frozenset({SurrogateKind.AUN, SurrogateKind.UQ_I, SurrogateKind.UQ_S, SurrogateKind.SUA})


def rate_2d(
    kind: Union[str, SurrogateKind],
    rho_p: float,
    rho_q: float,
    n_mc: int,
    seed: Seed,
    alpha: Optional[float] = None
) -> Tuple[float, float]:
    """
    Rate per component of a two-dimensional Gaussian latent with a factorized
    conditional model.

    Y ~ N(0, [[1, rho_p], [rho_p, 1]]). Ỹ1 is coded with N(0, 1) and Ỹ2 with
    N(rho_q * y1, 1 - rho_q^2), conditioned on y1 rather than ỹ1.

    Returns:
        (bits per component, standard error)
    """
    kind = SurrogateKind(kind)
    if kind not in RATE_2D_KINDS:
        raise UnsupportedMethod(f"rate_2d supports AUN, UQ_I, UQ_S and SUA, got {kind.value}")
    if not abs(rho_p) <= 1.0:
        raise InvalidParameter(f"rate_2d needs |rho_p| <= 1, got {rho_p}")
    if not abs(rho_q) < 1.0:
        raise InvalidParameter(f"rate_2d needs |rho_q| < 1, got {rho_q}")
    if n_mc < 2:
        raise InvalidParameter(f"rate_2d needs n_mc >= 2, got {n_mc}")

    spec = SurrogateSpec(kind, alpha=alpha)
    y = Gaussian2D(1.0, rho_p).sample(seed.derive(0), n_mc)
    noise = draw_noise(spec, y.shape, seed.derive(1).generator())
    y_tilde = np.asarray(forward(spec, y, noise))

    first = -np.log2(np.maximum(_gaussian_mass(y_tilde[:, 0], 0.0, 1.0), PROB_FLOOR))
    second = -np.log2(np.maximum(
        _gaussian_mass(y_tilde[:, 1], rho_q * y[:, 0], math.sqrt(1.0 - rho_q ** 2)), PROB_FLOOR
    ))
    per_sample = 0.5 * (first + second)
    return compensated_mean(per_sample), float(np.std(per_sample, ddof=1) / math.sqrt(n_mc))


def rate_uqs_2d(rho_p: float, rho_q: float, n_mc: int, seed: Seed) -> float:
    """rate_2d for universal quantization with shared noise; bits per component."""
    return rate_2d(SurrogateKind.UQ_S, rho_p, rho_q, n_mc, seed)[0]


def main():
    """Example usage of the entropy models."""
    print("=" * 60)
    print("Entropy model demo")
    print("=" * 60)
    model = GaussianEntropyModel(0.0, 1.0, 0.0)
    print(f"q(0) under N(0, 1)              = {prob_mass(model, 0.0):.6f}")
    print(f"clamped N(0, 0.05), sigma_0=0.11 = {prob_mass(GaussianEntropyModel(0.0, 0.05, 0.11), 0.0):.6f}")
    source = Gaussian1D(0.0, 0.3)
    matched = GaussianEntropyModel(0.0, 0.3, 0.0)
    for label in ["ROUND", "AUN", "SUA@5", "SR", "SRA@5"]:
        spec = SurrogateSpec.parse(label)
        print(f"R({spec.label:6s}) at matched N(0, 0.3^2) = {expected_rate(spec, source, matched):.4f} bits")
    print(f"zero-centre quantize(0.7, 0.4) = {zero_center_quantize(0.7, 0.4):.2f}")
    print(f"UQ-s 2-dim rate rho_p=1, rho_q=0.5 = {rate_uqs_2d(1.0, 0.5, 200000, Seed(root=3)):.4f} bits")


if __name__ == "__main__":
    main()
