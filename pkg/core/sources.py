#!/usr/bin/env python3
"""
Synthetic Sources

Scalar Gaussian, two-dimensional correlated Gaussian and Laplace sources with
densities, CDFs and seeded samplers, plus the fixed affine analysis transform
Y = sigma * X + mu used by the distortion simulations.
"""

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from core.errors import InvalidParameter
from core.numerics import Seed, std_normal_cdf, std_normal_pdf


@dataclass(frozen=True)
class Gaussian1D:
    """Scalar Gaussian N(mu, sigma^2)."""
    mu: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.mu) and math.isfinite(self.sigma)):
            raise InvalidParameter(f"Gaussian1D parameters must be finite, got mu={self.mu}, sigma={self.sigma}")
        if self.sigma <= 0:
            raise InvalidParameter(f"Gaussian1D sigma must be > 0, got {self.sigma}")

    @property
    def variance(self) -> float:
        return self.sigma ** 2

    def pdf(self, y):
        return std_normal_pdf((np.asarray(y, dtype=float) - self.mu) / self.sigma) / self.sigma

    def cdf(self, y):
        return std_normal_cdf((np.asarray(y, dtype=float) - self.mu) / self.sigma)

    def sample(self, seed: Seed, n: int) -> np.ndarray:
        _check_count(n)
        return self.mu + self.sigma * seed.generator().standard_normal(int(n))

    def support(self, tails: float = 10.0):
        """Integration window mu +/- tails * sigma."""
        return self.mu - tails * self.sigma, self.mu + tails * self.sigma

    def to_dict(self) -> dict:
        return {"family": "gaussian", "mu": self.mu, "sigma": self.sigma}


@dataclass(frozen=True)
class Gaussian2D:
    """
    Zero-mean bivariate Gaussian with covariance sigma^2 * [[1, rho], [rho, 1]].

    Samples use Y2 = rho * Y1 + sqrt(1 - rho^2) * sigma * Z; rho = +/-1 gives
    Y2 = +/-Y1 exactly.
    """
    sigma: float = 1.0
    rho: float = 0.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise InvalidParameter(f"Gaussian2D sigma must be > 0, got {self.sigma}")
        if not -1.0 <= self.rho <= 1.0:
            raise InvalidParameter(f"Gaussian2D rho must lie in [-1, 1], got {self.rho}")

    @property
    def covariance(self) -> np.ndarray:
        return self.sigma ** 2 * np.array([[1.0, self.rho], [self.rho, 1.0]])

    def marginal(self) -> Gaussian1D:
        return Gaussian1D(0.0, self.sigma)

    def pdf(self, y1, y2):
        if abs(self.rho) == 1.0:
            raise InvalidParameter("Gaussian2D density is singular for |rho| = 1")
        y1 = np.asarray(y1, dtype=float) / self.sigma
        y2 = np.asarray(y2, dtype=float) / self.sigma
        det = 1.0 - self.rho ** 2
        quad = (y1 ** 2 - 2.0 * self.rho * y1 * y2 + y2 ** 2) / det
        return np.exp(-0.5 * quad) / (2.0 * math.pi * self.sigma ** 2 * math.sqrt(det))

    def sample(self, seed: Seed, n: int) -> np.ndarray:
        """Return an (n, 2) array of draws."""
        _check_count(n)
        z = seed.generator().standard_normal((int(n), 2))
        y1 = self.sigma * z[:, 0]
        if abs(self.rho) == 1.0:
            y2 = math.copysign(1.0, self.rho) * y1
        else:
            y2 = self.rho * y1 + math.sqrt(1.0 - self.rho ** 2) * self.sigma * z[:, 1]
        return np.column_stack([y1, y2])

    def to_dict(self) -> dict:
        return {"family": "gaussian2d", "sigma": self.sigma, "rho": self.rho}


@dataclass(frozen=True)
class Laplace1D:
    """Laplace(location, scale); the standard source has variance 2."""
    location: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if not self.scale > 0:
            raise InvalidParameter(f"Laplace1D scale must be > 0, got {self.scale}")

    @property
    def variance(self) -> float:
        return 2.0 * self.scale ** 2

    def pdf(self, y):
        z = np.abs(np.asarray(y, dtype=float) - self.location) / self.scale
        result = 0.5 * np.exp(-z) / self.scale
        return float(result) if np.ndim(result) == 0 else result

    def cdf(self, y):
        d = (np.asarray(y, dtype=float) - self.location) / self.scale
        result = np.where(d < 0, 0.5 * np.exp(np.minimum(d, 0.0)), 1.0 - 0.5 * np.exp(-np.maximum(d, 0.0)))
        return float(result) if np.ndim(result) == 0 else result

    def sample(self, seed: Seed, n: int) -> np.ndarray:
        """Inverse-CDF sampling from u ~ U(-0.5, 0.5)."""
        _check_count(n)
        u = seed.generator().random(int(n)) - 0.5
        tail = np.maximum(1.0 - 2.0 * np.abs(u), np.finfo(float).tiny)
        return self.location - self.scale * np.sign(u) * np.log(tail)

    def support(self, tails: float = 40.0):
        return self.location - tails * self.scale, self.location + tails * self.scale

    def to_dict(self) -> dict:
        return {"family": "laplace", "location": self.location, "scale": self.scale}


Source = Union[Gaussian1D, Gaussian2D, Laplace1D]


@dataclass(frozen=True)
class AffineAnalysis:
    """Fixed analysis transform Y = sigma * X + mu applied to a standard source."""
    sigma: float
    mu: float = 0.0

    def __call__(self, x):
        return self.sigma * np.asarray(x, dtype=float) + self.mu

    def latent(self) -> Gaussian1D:
        """Law of Y when X is standard Gaussian."""
        return Gaussian1D(self.mu, self.sigma)


def pdf(source: Source, y, y2=None):
    """Density of `source` at y (pass y2 for the bivariate source)."""
    if isinstance(source, Gaussian2D):
        return source.pdf(y, y2)
    return source.pdf(y)


def cdf(source: Source, y):
    if isinstance(source, Gaussian2D):
        raise InvalidParameter("cdf is defined for scalar sources only")
    return source.cdf(y)


def sample(source: Source, seed: Seed, n: int) -> np.ndarray:
    return source.sample(seed, n)


def conditional_gaussian(model_rho: float, y1) -> Gaussian1D:
    """
    Law of Y2 given Y1 = y1 under a unit-variance bivariate model.

    Returns N(rho * y1, 1 - rho^2), i.e. sigma = sqrt(1 - rho^2).
    """
    if not abs(model_rho) < 1.0:
        raise InvalidParameter(f"conditional_gaussian needs |rho| < 1, got {model_rho}")
    return Gaussian1D(model_rho * float(y1), math.sqrt(1.0 - model_rho ** 2))


def _check_count(n: int) -> None:
    if n < 0:
        raise InvalidParameter(f"Sample count must be >= 0, got {n}")


def main():
    """Example usage of the synthetic sources."""
    print("=" * 60)
    print("Synthetic sources demo")
    print("=" * 60)
    seed = Seed(root=7)
    g = Gaussian1D(0.5, 0.3)
    draws = g.sample(seed, 100000)
    print(f"N(0.5, 0.3^2): sample mean {draws.mean():.4f}, std {draws.std():.4f}")
    pair = Gaussian2D(1.0, 0.8).sample(seed.derive(1), 100000)
    print(f"Gaussian2D(rho=0.8): sample corr {np.corrcoef(pair.T)[0, 1]:.4f}")
    lap = Laplace1D().sample(seed.derive(2), 100000)
    print(f"Laplace(0, 1): sample variance {lap.var():.4f} (exact 2)")
    cond = conditional_gaussian(0.5, 2.0)
    print(f"Y2 | y1=2, rho_q=0.5 -> N({cond.mu}, {cond.variance:.2f})")


if __name__ == "__main__":
    main()
