#!/usr/bin/env python3
"""
Numerics for quantlab

Deterministic special functions, numerical integration and the seeded
random-number contract used by every other module.

Randomness comes from numpy's Philox bit generator, a counter-based cipher
keyed by (root, stream_id). Identical keys give bit-identical streams, and
child streams are derived by hashing (root, stream_id, tags) through
SeedSequence, so experiments stay reproducible regardless of how work is
scheduled across threads.

All rates and entropies in quantlab are in bits.
"""

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy import special

from core.errors import InvalidParameter, NumericalError, SubdivisionLimit


UINT64_LIMIT = 2 ** 64

# Gaussian integration windows are truncated at mu +/- TAIL_SIGMAS * sigma
TAIL_SIGMAS = 10.0

# Adaptive Simpson starts from this many panels and never splits an interval
# narrower than MIN_RELATIVE_WIDTH of the integration range
INITIAL_PANELS = 16
MIN_RELATIVE_WIDTH = 1e-13


@dataclass(frozen=True)
class Seed:
    """Key of one random stream: a root seed plus a stream identifier."""
    root: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("root", "stream_id"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or not 0 <= int(value) < UINT64_LIMIT:
                raise InvalidParameter(f"Seed.{name} must be a 64-bit unsigned integer, got {value!r}")

    def derive(self, *tags: int) -> "Seed":
        """
        Derive an independent child stream.

        Args:
            tags: Non-negative integers identifying the child (e.g. grid index, trial)

        Returns:
            Seed with the same root and a hashed stream id
        """
        sequence = np.random.SeedSequence(
            entropy=int(self.root),
            spawn_key=(int(self.stream_id),) + tuple(int(t) for t in tags)
        )
        stream_id = int(sequence.generate_state(1, dtype=np.uint64)[0])
        return Seed(root=int(self.root), stream_id=stream_id)

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        key = (int(self.root) << 64) | int(self.stream_id)
        return np.random.Generator(np.random.Philox(key=key))

    def to_dict(self) -> dict:
        """Convert to dictionary for JSON serialization."""
        return {"root": int(self.root), "stream_id": int(self.stream_id)}

    @classmethod
    def from_value(cls, value) -> "Seed":
        """Accept an int, a dict with root/stream_id, or an existing Seed."""
        if isinstance(value, Seed):
            return value
        if isinstance(value, dict):
            return cls(root=int(value["root"]), stream_id=int(value.get("stream_id", 0)))
        return cls(root=int(value))


@dataclass(frozen=True)
class Quadrature:
    """
    Integration rule.

    method "adaptive-simpson" refines until the Richardson error estimate is
    below max(abs_tol, rel_tol * |value|); "gauss-legendre" applies a fixed
    n-point rule on `panels` equal panels.
    """
    method: str = "adaptive-simpson"
    abs_tol: float = 1e-10
    rel_tol: float = 1e-8
    max_subdivisions: int = 20000
    n: int = 32
    panels: int = 1

    def __post_init__(self):
        if self.method not in ("adaptive-simpson", "gauss-legendre"):
            raise InvalidParameter(f"Unknown quadrature method: {self.method!r}")
        if self.abs_tol < 0 or self.rel_tol < 0:
            raise InvalidParameter("Quadrature tolerances must be non-negative")
        if self.n < 1 or self.panels < 1 or self.max_subdivisions < 0:
            raise InvalidParameter("Quadrature sizes must be positive")


DEFAULT_QUADRATURE = Quadrature()


def std_normal_cdf(x):
    """Standard Gaussian CDF Φ(x); accepts scalars or arrays."""
    result = special.ndtr(x)
    return float(result) if np.ndim(result) == 0 else result


def std_normal_pdf(x):
    """Standard Gaussian density φ(x)."""
    x = np.asarray(x, dtype=float)
    result = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return float(result) if result.ndim == 0 else result


def normal_interval_mass(lo, hi):
    """
    P(lo < Z < hi) for standard Gaussian Z.

    Upper-tail intervals are evaluated through the survival function so that
    masses far from zero keep their relative precision.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    upper = lo > 0
    mass = np.where(
        upper,
        special.ndtr(-lo) - special.ndtr(-hi),
        special.ndtr(hi) - special.ndtr(lo)
    )
    mass = np.maximum(mass, 0.0)
    return float(mass) if mass.ndim == 0 else mass


def rng_uniform(seed: Seed, n: int) -> np.ndarray:
    """
    Draw n values from U(-0.5, 0.5) on the stream `seed`.

    The interval is half-open: -0.5 can occur, 0.5 cannot.
    """
    if n < 0:
        raise InvalidParameter(f"rng_uniform needs n >= 0, got {n}")
    return seed.generator().random(int(n)) - 0.5


def compensated_sum(values) -> float:
    """Order-independent sum of floats (exactly rounded)."""
    return math.fsum(np.asarray(values, dtype=float).ravel().tolist())


def compensated_mean(values) -> float:
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        return float("nan")
    return compensated_sum(values) / values.size


def _evaluate(f: Callable, x: np.ndarray) -> np.ndarray:
    fx = np.asarray(f(x), dtype=float)
    if fx.shape != x.shape:
        fx = np.broadcast_to(fx, x.shape).astype(float)
    if not np.all(np.isfinite(fx)):
        raise NumericalError("Integrand returned non-finite values")
    return fx


def _adaptive_simpson(f: Callable, a: float, b: float, q: Quadrature) -> float:
    width = b - a
    x = np.linspace(a, b, 2 * INITIAL_PANELS + 1)
    fx = _evaluate(f, x)

    lo, mid, hi = x[0:-1:2], x[1::2], x[2::2]
    flo, fmid, fhi = fx[0:-1:2], fx[1::2], fx[2::2]
    whole = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi)

    accepted = []
    accepted_total = 0.0
    subdivisions = 0

    while lo.size:
        lm = 0.5 * (lo + mid)
        rm = 0.5 * (mid + hi)
        f_new = _evaluate(f, np.concatenate([lm, rm]))
        flm, frm = f_new[:lo.size], f_new[lo.size:]

        left = (mid - lo) / 6.0 * (flo + 4.0 * flm + fmid)
        right = (hi - mid) / 6.0 * (fmid + 4.0 * frm + fhi)
        delta = left + right - whole

        estimate = accepted_total + float(np.sum(left + right))
        tol = max(q.abs_tol, q.rel_tol * abs(estimate))
        local_tol = 15.0 * tol * (hi - lo) / width
        done = (np.abs(delta) <= local_tol) | ((hi - lo) <= MIN_RELATIVE_WIDTH * width)

        if np.any(done):
            finished = left[done] + right[done] + delta[done] / 15.0
            accepted.append(finished)
            accepted_total += float(np.sum(finished))

        keep = ~done
        subdivisions += int(np.count_nonzero(keep))
        if subdivisions > q.max_subdivisions:
            raise SubdivisionLimit(
                f"Adaptive Simpson exceeded {q.max_subdivisions} subdivisions on [{a}, {b}]"
            )

        lo, mid, hi, flo, fmid, fhi, whole = (
            np.concatenate([lo[keep], mid[keep]]),
            np.concatenate([lm[keep], rm[keep]]),
            np.concatenate([mid[keep], hi[keep]]),
            np.concatenate([flo[keep], fmid[keep]]),
            np.concatenate([flm[keep], frm[keep]]),
            np.concatenate([fmid[keep], fhi[keep]]),
            np.concatenate([left[keep], right[keep]])
        )

    if not accepted:
        return 0.0
    return compensated_sum(np.concatenate(accepted))


def _gauss_legendre_nodes(a: float, b: float, q: Quadrature) -> Tuple[np.ndarray, np.ndarray]:
    base_nodes, base_weights = np.polynomial.legendre.leggauss(q.n)
    edges = np.linspace(a, b, q.panels + 1)
    half = 0.5 * np.diff(edges)
    centre = 0.5 * (edges[:-1] + edges[1:])
    nodes = (centre[:, None] + half[:, None] * base_nodes[None, :]).ravel()
    weights = (half[:, None] * base_weights[None, :]).ravel()
    return nodes, weights


def _split_points(a: float, b: float, breakpoints: Optional[Sequence[float]]) -> np.ndarray:
    points = [a, b]
    if breakpoints is not None:
        points.extend(float(p) for p in breakpoints if a < float(p) < b)
    return np.unique(np.asarray(points, dtype=float))


def integrate(
    f: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    q: Quadrature = DEFAULT_QUADRATURE,
    breakpoints: Optional[Sequence[float]] = None
) -> float:
    """
    Integrate a vectorized function over [a, b].

    Args:
        f: Function mapping an array of abscissae to an array of values
        a: Lower limit
        b: Upper limit (a <= b)
        q: Quadrature rule and tolerances
        breakpoints: Interior points where f has kinks or jumps; each piece is
                     integrated separately

    Returns:
        Integral estimate

    Raises:
        SubdivisionLimit: adaptive refinement exceeded q.max_subdivisions
    """
    a, b = float(a), float(b)
    if not (math.isfinite(a) and math.isfinite(b)):
        raise InvalidParameter("Integration limits must be finite")
    if a > b:
        raise InvalidParameter(f"integrate needs a <= b, got a={a}, b={b}")
    if a == b:
        return 0.0

    points = _split_points(a, b, breakpoints)
    pieces = []
    for lo, hi in zip(points[:-1], points[1:]):
        if q.method == "gauss-legendre":
            nodes, weights = _gauss_legendre_nodes(lo, hi, q)
            pieces.append(compensated_sum(weights * _evaluate(f, nodes)))
        else:
            pieces.append(_adaptive_simpson(f, lo, hi, q))
    return math.fsum(pieces)


def integrate2d(
    f: Callable[[np.ndarray, np.ndarray], np.ndarray],
    box: Tuple[Tuple[float, float], Tuple[float, float]],
    q: Quadrature = DEFAULT_QUADRATURE,
    breakpoints: Tuple[Optional[Sequence[float]], Optional[Sequence[float]]] = (None, None)
) -> float:
    """
    Integrate f(x, y) over box = ((ax, bx), (ay, by)).

    Gauss-Legendre uses the tensor-product rule; adaptive Simpson integrates
    iteratively (inner integral over y for every outer node x).
    """
    (ax, bx), (ay, by) = box
    x_breaks, y_breaks = breakpoints

    if q.method == "gauss-legendre":
        x_points = _split_points(float(ax), float(bx), x_breaks)
        y_points = _split_points(float(ay), float(by), y_breaks)
        pieces = []
        for x_lo, x_hi in zip(x_points[:-1], x_points[1:]):
            xn, xw = _gauss_legendre_nodes(x_lo, x_hi, q)
            for y_lo, y_hi in zip(y_points[:-1], y_points[1:]):
                yn, yw = _gauss_legendre_nodes(y_lo, y_hi, q)
                X, Y = np.meshgrid(xn, yn, indexing="ij")
                values = np.asarray(f(X, Y), dtype=float)
                if not np.all(np.isfinite(values)):
                    raise NumericalError("Integrand returned non-finite values")
                pieces.append(compensated_sum(xw[:, None] * yw[None, :] * values))
        return math.fsum(pieces)

    def inner(xs: np.ndarray) -> np.ndarray:
        return np.array([
            integrate(lambda ys, x=x: f(np.full_like(ys, x), ys), ay, by, q, y_breaks)
            for x in np.asarray(xs, dtype=float)
        ])

    return integrate(inner, ax, bx, q, x_breaks)


def main():
    """Example usage of the numerics module."""
    print("=" * 60)
    print("quantlab numerics demo")
    print("=" * 60)
    print(f"Phi(0.5)                 = {std_normal_cdf(0.5):.15f}")
    total = integrate(std_normal_pdf, -8.0, 8.0, Quadrature(rel_tol=1e-12))
    print(f"int pdf over [-8, 8]     = {total:.15f}")
    cube = integrate2d(lambda x, y: x * y, ((0.0, 1.0), (0.0, 1.0)))
    print(f"int x*y over [0, 1]^2    = {cube:.15f}")
    draws = rng_uniform(Seed(root=2024), 100000)
    print(f"U(-0.5, 0.5) mean/var    = {draws.mean():+.5f} / {draws.var():.5f} (1/12 = {1/12:.5f})")


if __name__ == "__main__":
    main()
