#!/usr/bin/env python3
"""
Mutual Information and Entropy

Information carried by the surrogate output about the latent for a scalar
Gaussian latent Y ~ N(mu, sigma^2), all in bits:

    rounding        I(Y; round(Y)) = H(round(Y))
    AUN, UQ         I(Y; Y + U) = h(Y + U), since h(U) = 0
    SUA, SUA_N      I(Y; Ỹ) = h(s_alpha(Y) + U), r_alpha being invertible
    SR, SRA         H(Ỹ) - E_y[h_b(P(ceil | y))]

plus the rho = 1 two-dimensional case, the continuous/discrete entropy
comparison and plug-in estimators used to cross-check the quadrature values.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from scipy import special

from core.entropy_model import (
    half_integers,
    integers,
    integration_window,
    rounding_bin_masses,
    soft_noise_density,
    source_mass,
    stochastic_bin_masses,
)
from core.errors import InvalidParameter, UnsupportedCase
from core.numerics import DEFAULT_QUADRATURE, TAIL_SIGMAS, Quadrature, compensated_sum, integrate, normal_interval_mass
from core.sources import Gaussian1D
from core.surrogates import SurrogateKind, SurrogateSpec, ceil_probability, soft_fn


LOG2 = math.log(2.0)

# Densities below this value contribute nothing to differential entropies
DENSITY_FLOOR = 1e-300

MI_KINDS = frozenset({
    SurrogateKind.ROUND, SurrogateKind.AUN, SurrogateKind.UQ_S, SurrogateKind.UQ_I,
    SurrogateKind.SR, SurrogateKind.SUA, SurrogateKind.SUA_N, SurrogateKind.SRA
})


def _neg_plogp_bits(p):
    """-p log2 p with 0 where p < DENSITY_FLOOR."""
    p = np.asarray(p, dtype=float)
    return np.where(p < DENSITY_FLOOR, 0.0, special.entr(np.maximum(p, DENSITY_FLOOR)) / LOG2)


def discrete_entropy(masses) -> float:
    """Shannon entropy in bits of a probability vector (normalized first)."""
    masses = np.asarray(masses, dtype=float).ravel()
    if masses.size == 0 or np.any(masses < 0):
        raise InvalidParameter("discrete_entropy needs a non-empty vector of non-negative masses")
    total = compensated_sum(masses)
    if not total > 0:
        raise InvalidParameter("discrete_entropy needs positive total mass")
    return max(compensated_sum(special.entr(masses / total)) / LOG2, 0.0)


def plugin_entropy(samples) -> float:
    """Plug-in entropy in bits of discrete samples (empirical frequencies)."""
    _, counts = np.unique(np.asarray(samples), return_counts=True)
    return discrete_entropy(counts.astype(float))


def histogram_entropy(samples, width: float) -> float:
    """Plug-in differential entropy in bits from a histogram with bin width `width`."""
    if not width > 0:
        raise InvalidParameter(f"histogram_entropy needs width > 0, got {width}")
    cells = np.floor(np.asarray(samples, dtype=float) / width)
    return plugin_entropy(cells) + math.log2(width)


def mi_rounding(source: Gaussian1D) -> float:
    """I(Y; round(Y)) = H(round(Y)) in bits."""
    _, masses = rounding_bin_masses(source)
    return max(compensated_sum(special.entr(masses)) / LOG2, 0.0)


def smoothed_entropy(source: Gaussian1D, q: Quadrature = DEFAULT_QUADRATURE) -> float:
    """Differential entropy h(Y + U) in bits."""
    lo, hi = integration_window(source)

    def integrand(t: np.ndarray) -> np.ndarray:
        return _neg_plogp_bits(source_mass(source, t - 0.5, t + 0.5))

    return integrate(integrand, lo, hi, q, [source.mu - 0.5, source.mu + 0.5])


def mi_aun(source: Gaussian1D, q: Quadrature = DEFAULT_QUADRATURE) -> float:
    """I(Y; Y + U) = h(Y + U) in bits."""
    return max(smoothed_entropy(source, q), 0.0)


def mi_sua(source: Gaussian1D, alpha: float, q: Quadrature = DEFAULT_QUADRATURE) -> float:
    """I(Y; r_alpha(s_alpha(Y) + U)) = h(s_alpha(Y) + U) in bits."""
    lo, hi = integration_window(source)
    z_lo, z_hi = float(soft_fn(lo, alpha)) - 0.5, float(soft_fn(hi, alpha)) + 0.5
    density = soft_noise_density(source, alpha)
    value = integrate(lambda z: _neg_plogp_bits(density(z)), z_lo, z_hi, q, half_integers(z_lo, z_hi))
    return max(value, 0.0)


def mi_sua_n(source: Gaussian1D, alpha: float, q: Quadrature = DEFAULT_QUADRATURE) -> float:
    """Same as mi_sua: the denoiser does not change the information."""
    return mi_sua(source, alpha, q)


def _stochastic_rounding_mi(spec: SurrogateSpec, source: Gaussian1D, q: Quadrature) -> float:
    _, masses = stochastic_bin_masses(spec, source, q)
    output_entropy = compensated_sum(special.entr(masses)) / LOG2
    lo, hi = integration_window(source)

    def conditional(y: np.ndarray) -> np.ndarray:
        p = np.clip(np.asarray(ceil_probability(spec, y)), 0.0, 1.0)
        binary = (special.entr(p) + special.entr(1.0 - p)) / LOG2
        return np.asarray(source.pdf(y)) * binary

    breaks = integers(lo, hi) + [k + 0.5 for k in integers(lo, hi)]
    return max(output_entropy - integrate(conditional, lo, hi, q, breaks), 0.0)


def mi_sr(source: Gaussian1D, q: Quadrature = DEFAULT_QUADRATURE) -> float:
    """I(Y; Ỹ) for stochastic rounding, in bits."""
    return _stochastic_rounding_mi(SurrogateSpec(SurrogateKind.SR), source, q)


def mi_sra(source: Gaussian1D, alpha: float, q: Quadrature = DEFAULT_QUADRATURE) -> float:
    """I(Y; Ỹ) for stochastic rounding annealing, in bits."""
    return _stochastic_rounding_mi(SurrogateSpec(SurrogateKind.SRA, alpha=alpha), source, q)


def mutual_information(spec: SurrogateSpec, source: Gaussian1D, q: Quadrature = DEFAULT_QUADRATURE) -> float:
    """Dispatch I(Y; Ỹ) by forward kind."""
    kind = spec.kind
    if kind not in MI_KINDS:
        raise UnsupportedCase(f"Mutual information is not computed for {kind.value}")
    if kind == SurrogateKind.ROUND:
        return mi_rounding(source)
    if kind in (SurrogateKind.AUN, SurrogateKind.UQ_S, SurrogateKind.UQ_I):
        return mi_aun(source, q)
    if kind == SurrogateKind.SR:
        return mi_sr(source, q)
    if kind == SurrogateKind.SUA:
        return mi_sua(source, spec.alpha, q)
    if kind == SurrogateKind.SUA_N:
        return mi_sua_n(source, spec.alpha, q)
    return mi_sra(source, spec.alpha, q)


def joint_smoothed_entropy(sigma: float, q: Quadrature = DEFAULT_QUADRATURE) -> float:
    """
    h(Y + U1, Y + U2) in bits for Y ~ N(0, sigma^2) and independent U1, U2.

    The joint density at (a, a + d), d in [0, 1], is the Gaussian mass of
    [a + d - 0.5, a + 0.5]; the region d < 0 contributes the same by symmetry.
    """
    lo, hi = -TAIL_SIGMAS * sigma - 1.0, TAIL_SIGMAS * sigma + 1.0

    def inner(d_values: np.ndarray) -> np.ndarray:
        out = []
        for d in np.asarray(d_values, dtype=float):
            def along_a(a: np.ndarray, d=d) -> np.ndarray:
                mass = normal_interval_mass((a + d - 0.5) / sigma, (a + 0.5) / sigma)
                return _neg_plogp_bits(mass)
            out.append(integrate(along_a, lo, hi, q, [-0.5, 0.5 - d]))
        return np.asarray(out)

    return 2.0 * integrate(inner, 0.0, 1.0, q)


def mi_2d_correlated(spec: SurrogateSpec, sigma: float, rho: float = 1.0, q: Quadrature = DEFAULT_QUADRATURE) -> float:
    """
    I(Y1, Y2; Ỹ1, Ỹ2) per vector for Y1 = Y2 ~ N(0, sigma^2).

    ROUND gives H(round(Y1)); UQ_S shares its noise so it carries I(Y1; Ỹ1);
    AUN and UQ_I carry the joint smoothed entropy h(Ỹ1, Ỹ2).
    """
    if rho != 1.0:
        raise UnsupportedCase(f"mi_2d_correlated computes the rho = 1 case only, got rho={rho}")
    if not sigma > 0:
        raise InvalidParameter(f"mi_2d_correlated needs sigma > 0, got {sigma}")
    source = Gaussian1D(0.0, sigma)
    kind = spec.kind
    if kind == SurrogateKind.ROUND:
        return mi_rounding(source)
    if kind == SurrogateKind.UQ_S:
        return mi_aun(source, q)
    if kind in (SurrogateKind.AUN, SurrogateKind.UQ_I):
        return joint_smoothed_entropy(sigma, q)
    raise UnsupportedCase(f"mi_2d_correlated supports ROUND, UQ_S, AUN and UQ_I, got {kind.value}")


def entropy_compare(mu: float, sigma: float, q: Quadrature = DEFAULT_QUADRATURE) -> Tuple[float, float]:
    """(h(Y + U), H(round(Y - mu))) for Y ~ N(mu, sigma^2), in bits."""
    if not sigma > 0:
        raise InvalidParameter(f"entropy_compare needs sigma > 0, got {sigma}")
    return smoothed_entropy(Gaussian1D(mu, sigma), q), mi_rounding(Gaussian1D(0.0, sigma))


@dataclass
class InfoCurve:
    """I(Y; Ỹ) and I(Y; round(Y)) over a (mu, sigma) grid; rows follow mu_grid."""
    spec: SurrogateSpec
    mu_grid: np.ndarray
    sigma_grid: np.ndarray
    values: np.ndarray
    baseline: np.ndarray

    @property
    def excess(self) -> np.ndarray:
        """I(Y; Ỹ) - I(Y; round(Y))."""
        return self.values - self.baseline

    def rows(self) -> List[dict]:
        out = []
        for i, mu in enumerate(self.mu_grid):
            for j, sigma in enumerate(self.sigma_grid):
                out.append({
                    "mu": float(mu),
                    "sigma": float(sigma),
                    "I_bits": float(self.values[i, j]),
                    "I_minus_round_bits": float(self.values[i, j] - self.baseline[i, j])
                })
        return out


def info_curve(
    calc: SurrogateSpec,
    mu_values: Sequence[float],
    sigma_values: Sequence[float],
    q: Quadrature = DEFAULT_QUADRATURE,
    threads: int = 1
) -> InfoCurve:
    """Tabulate mutual information of `calc` and of rounding over a grid."""
    mu_grid = np.asarray(mu_values, dtype=float)
    sigma_grid = np.asarray(sigma_values, dtype=float)
    if mu_grid.size == 0 or sigma_grid.size == 0:
        raise InvalidParameter("info_curve needs non-empty grids")
    indices = [(i, j) for i in range(mu_grid.size) for j in range(sigma_grid.size)]

    def evaluate(index: Tuple[int, int]) -> Tuple[float, float]:
        source = Gaussian1D(float(mu_grid[index[0]]), float(sigma_grid[index[1]]))
        return mutual_information(calc, source, q), mi_rounding(source)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(evaluate, indices))
    else:
        results = [evaluate(index) for index in indices]

    shape = (mu_grid.size, sigma_grid.size)
    return InfoCurve(
        spec=calc, mu_grid=mu_grid, sigma_grid=sigma_grid,
        values=np.array([r[0] for r in results]).reshape(shape),
        baseline=np.array([r[1] for r in results]).reshape(shape)
    )


def log_sigma_grid(lo: float = 0.05, hi: float = 2.0, points: int = 20) -> np.ndarray:
    """Logarithmically spaced sigma values."""
    return np.geomspace(lo, hi, points)


def main():
    """Example usage of the information measures."""
    print("=" * 60)
    print("Mutual information demo")
    print("=" * 60)
    for sigma in (0.1, 0.5, 1.0):
        source = Gaussian1D(0.0, sigma)
        print(f"sigma={sigma:<4}: round {mi_rounding(source):.4f}, AUN {mi_aun(source):.4f}, "
              f"SR {mi_sr(source):.4f}, SUA5 {mi_sua(source, 5.0):.4f}, SRA5 {mi_sra(source, 5.0):.4f} bits")
    h_cont, h_disc = entropy_compare(0.25, 0.5)
    print(f"entropy_compare(0.25, 0.5) = ({h_cont:.4f}, {h_disc:.4f})")
    print(f"mi_2d rho=1, sigma=0.3: UQ_S {mi_2d_correlated(SurrogateSpec(SurrogateKind.UQ_S), 0.3):.4f}, "
          f"AUN {mi_2d_correlated(SurrogateSpec(SurrogateKind.AUN), 0.3):.4f} bits")


if __name__ == "__main__":
    main()
