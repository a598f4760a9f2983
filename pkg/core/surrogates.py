#!/usr/bin/env python3
"""
Quantization Surrogates (forward calculations)

Every forward calculation is a deterministic function of the latent y, an
explicit noise draw and the surrogate parameters, so callers own all
randomness. Supported kinds:

    ROUND   rounding (ties away from zero)
    SHA     soft hard annealing, s_alpha(y)
    AUN     additive uniform noise, y + u
    UQ_S    universal quantization, one shared u per vector
    UQ_I    universal quantization, independent u per component
    SGA     stochastic Gumbel annealing (hard categorical sample)
    SUA     stochastic uniform annealing, r_alpha(s_alpha(y) + u)
    SUA_N   SUA without the denoiser, s_alpha(y) + u
    SR      stochastic rounding
    SRA     stochastic rounding annealing, probabilities shaped by s_alpha

Noise conventions: additive kinds take u in [-0.5, 0.5); SR, SRA and SGA take
one decision variable d in [0, 1) per component and return ceil when
d < P(ceil).
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Tuple

import numpy as np
from scipy import special

from core.errors import DegenerateInput, DimensionMismatch, InvalidParameter


# Clamp on the atanh argument in the SGA probabilities
SGA_ATANH_CLAMP = 1.0 - 1e-6


class SurrogateKind(str, Enum):
    ROUND = "ROUND"
    SHA = "SHA"
    AUN = "AUN"
    UQ_S = "UQ_S"
    UQ_I = "UQ_I"
    SGA = "SGA"
    SUA = "SUA"
    SUA_N = "SUA_N"
    SR = "SR"
    SRA = "SRA"


ANNEALED_KINDS = frozenset({SurrogateKind.SHA, SurrogateKind.SUA, SurrogateKind.SUA_N, SurrogateKind.SRA})
DECISION_KINDS = frozenset({SurrogateKind.SR, SurrogateKind.SRA, SurrogateKind.SGA})
DETERMINISTIC_KINDS = frozenset({SurrogateKind.ROUND, SurrogateKind.SHA})


@dataclass(frozen=True)
class SurrogateSpec:
    """A forward calculation and its parameters."""
    kind: SurrogateKind
    alpha: Optional[float] = None
    tau: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", SurrogateKind(self.kind))
        if self.kind in ANNEALED_KINDS:
            if self.alpha is None or not math.isfinite(self.alpha) or self.alpha <= 0:
                raise InvalidParameter(f"{self.kind.value} needs a finite alpha > 0, got {self.alpha}")
        if self.kind == SurrogateKind.SGA:
            if self.tau is None or not math.isfinite(self.tau) or self.tau <= 0:
                raise InvalidParameter(f"SGA needs a finite tau > 0, got {self.tau}")

    @property
    def is_stochastic(self) -> bool:
        return self.kind not in DETERMINISTIC_KINDS

    @property
    def label(self) -> str:
        """Short name, e.g. SUA5 for SUA with alpha = 5."""
        if self.kind in ANNEALED_KINDS:
            return f"{self.kind.value}{self.alpha:g}"
        if self.kind == SurrogateKind.SGA:
            return f"SGA{self.tau:g}"
        return self.kind.value

    def noise_shape(self, y_shape: Tuple[int, ...]) -> Optional[Tuple[int, ...]]:
        """Shape of the noise draw required for latents of shape y_shape."""
        if self.kind in DETERMINISTIC_KINDS:
            return None
        if self.kind == SurrogateKind.UQ_S:
            return tuple(y_shape[:-1]) + (1,) if len(y_shape) else ()
        return tuple(y_shape)

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "alpha": self.alpha, "tau": self.tau}

    @classmethod
    def parse(cls, text: str, tau: float = 1.0) -> "SurrogateSpec":
        """Parse labels such as "AUN", "SUA@5" or "SGA@0.5"."""
        name, _, param = str(text).partition("@")
        kind = SurrogateKind(name.strip().upper().replace("-", "_"))
        value = float(param) if param else None
        if kind == SurrogateKind.SGA:
            return cls(kind, tau=value if value is not None else tau)
        return cls(kind, alpha=value)


@dataclass(frozen=True)
class AnnealSchedule:
    """Linear schedule of alpha from alpha_start to alpha_max over total_steps."""
    alpha_start: float = 1.0
    alpha_max: float = 12.0
    total_steps: int = 1

    def __post_init__(self):
        if self.total_steps < 1:
            raise InvalidParameter(f"AnnealSchedule total_steps must be >= 1, got {self.total_steps}")
        if self.alpha_start <= 0 or self.alpha_max <= 0:
            raise InvalidParameter("AnnealSchedule alphas must be > 0")

    def alpha(self, step: int) -> float:
        fraction = min(max(step, 0), self.total_steps) / self.total_steps
        return self.alpha_start + (self.alpha_max - self.alpha_start) * fraction


def round_half(y):
    """Round to the nearest integer, ties away from zero."""
    y = np.asarray(y, dtype=float)
    whole = np.trunc(y)
    result = np.where(np.abs(y - whole) == 0.5, whole + np.sign(y), np.rint(y))
    return _scalar_or_array(result + 0.0)


def soft_fn(y, alpha: float):
    """s_alpha(y) = floor(y) + tanh(alpha r) / (2 tanh(alpha / 2)) + 0.5, r = frac(y) - 0.5."""
    _check_alpha(alpha)
    y = np.asarray(y, dtype=float)
    floor = np.floor(y)
    r = y - floor - 0.5
    return _scalar_or_array(floor + np.tanh(alpha * r) / (2.0 * math.tanh(alpha / 2.0)) + 0.5)


def soft_fn_grad(y, alpha: float):
    """Derivative of s_alpha."""
    _check_alpha(alpha)
    y = np.asarray(y, dtype=float)
    r = y - np.floor(y) - 0.5
    return _scalar_or_array(alpha * (1.0 - np.tanh(alpha * r) ** 2) / (2.0 * math.tanh(alpha / 2.0)))


def soft_inv(z, alpha: float):
    """Inverse of s_alpha, closed form through atanh of the fractional part."""
    _check_alpha(alpha)
    z = np.asarray(z, dtype=float)
    floor = np.floor(z)
    r = z - floor - 0.5
    t = math.tanh(alpha / 2.0)
    arg = np.clip(2.0 * r * t, -1.0, 1.0)
    with np.errstate(divide="ignore"):
        inner = np.arctanh(arg) / alpha
    # integers map to themselves even when tanh(alpha / 2) rounds to 1
    result = np.where(r <= -0.5, floor, floor + 0.5 + inner)
    return _scalar_or_array(result)


def soft_inv_grad(z, alpha: float):
    """Derivative of s_alpha^{-1}; infinite at integers once tanh(alpha / 2) == 1."""
    _check_alpha(alpha)
    z = np.asarray(z, dtype=float)
    r = z - np.floor(z) - 0.5
    t = math.tanh(alpha / 2.0)
    denom = alpha * (1.0 - (2.0 * r * t) ** 2)
    with np.errstate(divide="ignore"):
        result = np.where(denom > 0, 2.0 * t / np.where(denom > 0, denom, 1.0), np.inf)
    return _scalar_or_array(result)


def denoise_r(z, alpha: float):
    """r_alpha(z) = s_alpha^{-1}(z - 0.5) + 0.5."""
    z = np.asarray(z, dtype=float)
    return _scalar_or_array(np.asarray(soft_inv(z - 0.5, alpha)) + 0.5)


def denoise_r_grad(z, alpha: float):
    z = np.asarray(z, dtype=float)
    return soft_inv_grad(z - 0.5, alpha)


def sga_probs(y, tau: float):
    """
    SGA rounding probabilities (p_floor, p_ceil) with ceil = floor + 1.

    p(floor) ∝ exp(-atanh(y - floor)/tau), p(floor + 1) ∝ exp(-atanh(floor + 1 - y)/tau).
    Both atanh arguments are clamped to SGA_ATANH_CLAMP.
    """
    if tau is None or not tau > 0:
        raise InvalidParameter(f"sga_probs needs tau > 0, got {tau}")
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise DegenerateInput("sga_probs needs finite inputs")
    d_floor = np.minimum(y - np.floor(y), SGA_ATANH_CLAMP)
    d_ceil = np.minimum(1.0 - (y - np.floor(y)), SGA_ATANH_CLAMP)
    p_ceil = special.expit((np.arctanh(d_floor) - np.arctanh(d_ceil)) / tau)
    p_floor = 1.0 - p_ceil
    return _scalar_or_array(p_floor), _scalar_or_array(p_ceil)


def sga_ceil_prob_grad(y, tau: float):
    """d P(ceil) / dy for SGA (zero where the clamp is active)."""
    y = np.asarray(y, dtype=float)
    frac = y - np.floor(y)
    d_floor = np.minimum(frac, SGA_ATANH_CLAMP)
    d_ceil = np.minimum(1.0 - frac, SGA_ATANH_CLAMP)
    p_ceil = special.expit((np.arctanh(d_floor) - np.arctanh(d_ceil)) / tau)
    slope = np.where(frac < SGA_ATANH_CLAMP, 1.0 / (1.0 - d_floor ** 2), 0.0)
    slope = slope + np.where(1.0 - frac < SGA_ATANH_CLAMP, 1.0 / (1.0 - d_ceil ** 2), 0.0)
    return _scalar_or_array(p_ceil * (1.0 - p_ceil) * slope / tau)


def ceil_probability(spec: SurrogateSpec, y):
    """P(ỹ = floor(y) + 1 | y) for the stochastic rounding kinds."""
    y = np.asarray(y, dtype=float)
    floor = np.floor(y)
    if spec.kind == SurrogateKind.SR:
        return _scalar_or_array(y - floor)
    if spec.kind == SurrogateKind.SRA:
        return _scalar_or_array(np.clip(np.asarray(soft_fn(y, spec.alpha)) - floor, 0.0, 1.0))
    if spec.kind == SurrogateKind.SGA:
        return sga_probs(y, spec.tau)[1]
    raise InvalidParameter(f"ceil_probability is defined for SR, SRA and SGA, not {spec.kind.value}")


def draw_noise(spec: SurrogateSpec, shape: Tuple[int, ...], generator: np.random.Generator) -> Optional[np.ndarray]:
    """Draw noise matching the dimensionality rule for latents of `shape`."""
    noise_shape = spec.noise_shape(tuple(shape))
    if noise_shape is None:
        return None
    if spec.kind in DECISION_KINDS:
        return generator.random(noise_shape)
    return generator.random(noise_shape) - 0.5


def _check_noise(spec: SurrogateSpec, y: np.ndarray, noise) -> Optional[np.ndarray]:
    expected = spec.noise_shape(y.shape)
    if expected is None:
        return None
    if noise is None:
        raise DimensionMismatch(f"{spec.kind.value} needs a noise draw of shape {expected}")
    noise = np.asarray(noise, dtype=float)
    if spec.kind == SurrogateKind.UQ_S:
        if noise.size == 1:
            return noise.reshape(())
        if noise.shape != expected:
            raise DimensionMismatch(f"UQ_S needs one shared noise value per vector, shape {expected}, got {noise.shape}")
        return noise
    if noise.shape != y.shape:
        raise DimensionMismatch(f"{spec.kind.value} needs one noise value per component, shape {y.shape}, got {noise.shape}")
    return noise


def forward(spec: SurrogateSpec, y, noise=None):
    """
    Apply the forward calculation ỹ = f(y, noise).

    Args:
        spec: Surrogate and parameters
        y: Latent values (scalar, vector, or batch of vectors with components last)
        noise: Noise draw following the dimensionality rule of spec.kind

    Returns:
        ỹ with the shape of y
    """
    y = np.asarray(y, dtype=float)
    noise = _check_noise(spec, y, noise)
    kind = spec.kind

    if kind == SurrogateKind.ROUND:
        out = round_half(y)
    elif kind == SurrogateKind.SHA:
        out = soft_fn(y, spec.alpha)
    elif kind == SurrogateKind.AUN:
        out = y + noise
    elif kind in (SurrogateKind.UQ_S, SurrogateKind.UQ_I):
        out = np.asarray(round_half(y + noise)) - noise
    elif kind == SurrogateKind.SUA_N:
        out = np.asarray(soft_fn(y, spec.alpha)) + noise
    elif kind == SurrogateKind.SUA:
        out = denoise_r(np.asarray(soft_fn(y, spec.alpha)) + noise, spec.alpha)
    else:
        p_ceil = np.asarray(ceil_probability(spec, y))
        out = np.floor(y) + (noise < p_ceil)
    return _scalar_or_array(np.asarray(out, dtype=float))


def forward_jacobian(spec: SurrogateSpec, y, noise=None):
    """
    Pathwise derivative dỹ_i/dy_i at frozen noise.

    UQ kinds treat their inner rounding straight-through (identity); ROUND and
    the stochastic rounding kinds have zero pathwise derivative.
    """
    y = np.asarray(y, dtype=float)
    noise = _check_noise(spec, y, noise)
    kind = spec.kind
    if kind in (SurrogateKind.AUN, SurrogateKind.UQ_S, SurrogateKind.UQ_I):
        jac = np.ones_like(y)
    elif kind in (SurrogateKind.SHA, SurrogateKind.SUA_N):
        jac = np.asarray(soft_fn_grad(y, spec.alpha))
    elif kind == SurrogateKind.SUA:
        z = np.asarray(soft_fn(y, spec.alpha)) + noise
        jac = np.asarray(denoise_r_grad(z, spec.alpha)) * np.asarray(soft_fn_grad(y, spec.alpha))
    else:
        jac = np.zeros_like(y)
    return _scalar_or_array(jac)


def soft_curves(alpha: float, grid) -> dict:
    """Tabulate s_alpha, r_alpha and their derivatives on `grid`."""
    grid = np.asarray(grid, dtype=float)
    return {
        "y": grid,
        "s": np.asarray(soft_fn(grid, alpha)),
        "s_grad": np.asarray(soft_fn_grad(grid, alpha)),
        "r": np.asarray(denoise_r(grid, alpha)),
        "r_grad": np.asarray(denoise_r_grad(grid, alpha))
    }


def _check_alpha(alpha: float) -> None:
    if alpha is None or not alpha > 0:
        raise InvalidParameter(f"alpha must be > 0, got {alpha}")


def _scalar_or_array(value):
    value = np.asarray(value)
    return float(value) if value.ndim == 0 else value


def main():
    """Example usage of the forward calculations."""
    print("=" * 60)
    print("Forward calculations demo")
    print("=" * 60)
    y = np.array([0.3, 0.4, 1.75])
    rng = np.random.Generator(np.random.Philox(key=1))
    for label in ["ROUND", "SHA@5", "AUN", "UQ_S", "UQ_I", "SGA@0.5", "SUA@5", "SUA_N@5", "SR", "SRA@5"]:
        spec = SurrogateSpec.parse(label)
        noise = draw_noise(spec, y.shape, rng)
        print(f"{spec.label:8s} -> {np.round(forward(spec, y, noise), 4)}")
    print()
    print(f"s_5(0.75) = {soft_fn(0.75, 5.0):.6f}, s_5^-1 of that = {soft_inv(soft_fn(0.75, 5.0), 5.0):.6f}")


if __name__ == "__main__":
    main()
