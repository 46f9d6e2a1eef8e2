"""Bethe-ansatz contour integrals for ASEP and rainbow ASEP.

Internal convention: right jump rate 1, left jump rate q, real time t.  The
one-variable exponent is (1/xi + q xi - (1 + q)) t and the two-particle
scattering factor is

    S(xi_a, xi_b) = -(1 + q xi_a xi_b - (1 + q) xi_a) / (1 + q xi_a xi_b - (1 + q) xi_b).

The left-most particle formula is written in the normalization where the
right and left rates add up to one, p = 1/(1 + q) and 1 - p = q/(1 + q),
with time rescaled by 1 + q.

Contours are circles |xi| = r with r below the smallest modulus
r*(q) of a zero of 1 + q a b - (1 + q) b when |a| = |b|, so no scattering
pole is enclosed.  Integrals are evaluated with the trapezoidal rule in
each variable, which converges geometrically for these integrands.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import expm_multiply

from .errors import (DenominatorPole, InvalidParams, NoConvergence, NonRealResult,
                     PrecisionLoss,
                     OrderingViolation, PoleOnGrid, WindowTooLarge)
from .lattice import RainbowState, build_rainbow_generator, inversions
from .qspecial import q_factorial

POLE_GUARD = 1e-8
IMAG_TOL = 1e-9
EPS = float(np.finfo(float).eps)
ROUNDING_FACTOR = 64.0
MAX_PERMUTATION_N = 6
AUTO_FRACTIONS = (0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.85)
AUTO_NODES = 32
# the rounding error of a sum of n summands of total size S is about EPS S / sqrt(n);
# PRECISION_SAFETY pads that estimate
PRECISION_SAFETY = 10.0
MAX_LUMPED_STATES = 200000


def critical_radius(q: float) -> float:
    """Positive root of q r^2 + (1 + q) r - 1 = 0; circles with r below it avoid the S poles."""
    return (-(1.0 + q) + math.sqrt((1.0 + q) ** 2 + 4.0 * q)) / (2.0 * q)


@dataclass(frozen=True)
class ContourSpec:
    """Circle radius, initial nodes per variable and refinement controls.

    ``radius=None`` lets each integral choose its own radius among
    AUTO_FRACTIONS of the critical radius r*(q): the one whose coarse-grid
    summands have the smallest L1 size, which limits cancellation.
    """

    radius: float | None = None
    nodes: int = 64
    max_doublings: int = 3
    rel_tol: float = 1e-10
    abs_tol: float = 1e-14
    precision_tol: float = 1e-8

    def __post_init__(self):
        if self.radius is not None and not 0 < self.radius < 1:
            raise InvalidParams("radius must lie in (0, 1)")
        if self.nodes < 16:
            raise InvalidParams("at least 16 nodes per variable")

    def radius_for(self, q: float) -> float:
        """The fixed radius, or 0.5 r*(q) when none is set."""
        r = 0.5 * critical_radius(q) if self.radius is None else self.radius
        if r >= critical_radius(q):
            raise InvalidParams(f"radius {r} encloses scattering poles (r* = {critical_radius(q):.4g})")
        return r


def _grid(N: int, r: float, M: int, shift: float):
    theta = 2.0 * np.pi * (np.arange(M) + 0.5 + shift) / M
    z = r * np.exp(1j * theta)
    return np.meshgrid(*([z] * N), indexing="ij", sparse=N > 1) if N > 1 else [z]


def _trapezoid(integrand, N, r, M, shift):
    """(value, L1 size of the summands) of the product trapezoidal rule."""
    xi = _grid(N, r, M, shift)
    vals = integrand(xi)
    weight = 1.0
    for g in xi:
        weight = weight * g
    terms = np.broadcast_to(vals * weight, (M,) * N)
    return complex(np.sum(terms)) / M ** N, float(np.sum(np.abs(terms))) / M ** N


def circle_quadrature(integrand: Callable, spec: ContourSpec, N: int, q: float | None = None,
                      radius: float | None = None, with_size: bool = False):
    """(1/2 pi i)^N times the integral of ``integrand`` over |xi_i| = r.

    ``integrand`` receives a list of N broadcastable complex arrays.  The
    node count doubles until two successive values agree to within the
    relative tolerance, the absolute tolerance, or the rounding floor of the
    sum (a small multiple of machine epsilon times its L1 size).  A grid
    that lands within POLE_GUARD of a pole (PoleOnGrid) is rotated by half a
    spacing.  With ``with_size`` the L1 size of the final sum and the final
    node count per variable are returned too, as (value, size, nodes).
    """
    def evaluate(m, r):
        try:
            return _trapezoid(integrand, N, r, m, 0.0)
        except PoleOnGrid:
            return _trapezoid(integrand, N, r, m, 0.5)

    if radius is None:
        if spec.radius is not None or q is None:
            radius = spec.radius_for(q) if q is not None else (spec.radius or 0.5)
        else:
            rstar = critical_radius(q)
            sizes = [(evaluate(AUTO_NODES, f * rstar)[1], f * rstar) for f in AUTO_FRACTIONS]
            radius = min(sizes)[1]
    M = spec.nodes

    prev, _ = evaluate(M, radius)
    change = math.inf
    for _ in range(spec.max_doublings):
        M *= 2
        cur, size = evaluate(M, radius)
        change = abs(cur - prev)
        if change <= max(spec.rel_tol * abs(cur), spec.abs_tol, ROUNDING_FACTOR * EPS * size):
            return (cur, size, M) if with_size else cur
        prev = cur
    raise NoConvergence(f"quadrature did not settle after {spec.max_doublings} doublings "
                        f"(last change {change:.3g})")


# ---------------------------------------------------------------------------
# scattering factors

def _safe(den):
    if np.min(np.abs(den)) < POLE_GUARD:
        raise PoleOnGrid("scattering denominator vanishes on the grid")
    return den


def s_factor(xi_a, xi_b, q: float):
    """S(xi_a, xi_b) in the rates (1, q) convention."""
    prod = q * xi_a * xi_b
    return -(1.0 + prod - (1.0 + q) * xi_a) / _safe(1.0 + prod - (1.0 + q) * xi_b)


def a_sigma(sigma: Sequence[int], xi: Sequence, q: float):
    """prod over inversions i < j, sigma(i) > sigma(j) of S(xi_{sigma(i)}, xi_{sigma(j)}).

    ``sigma`` is a tuple of 0-based labels.
    """
    out = 1.0
    n = len(sigma)
    for i in range(n):
        for j in range(i + 1, n):
            if sigma[i] > sigma[j]:
                out = out * s_factor(xi[sigma[i]], xi[sigma[j]], q)
    return out


def _exponent(xi, q: float, t: float):
    total = 0.0
    for g in xi:
        total = total + (1.0 / g + q * g - (1.0 + q))
    return np.exp(total * t)


def _check_real(z: complex, what: str, size: float = 0.0) -> float:
    """Real part of z, after checking the imaginary part is at rounding level."""
    if abs(z.imag) > max(IMAG_TOL, ROUNDING_FACTOR * EPS * size):
        raise NonRealResult(f"{what}: imaginary part {z.imag:.3g}")
    return z.real


def _check_precision(size: float, nodes: int, N: int, spec: ContourSpec, what: str):
    """Raise PrecisionLoss when the estimated rounding error exceeds spec.precision_tol."""
    est = PRECISION_SAFETY * EPS * size / math.sqrt(float(nodes) ** N)
    if est > spec.precision_tol:
        raise PrecisionLoss(f"{what}: estimated rounding error {est:.2g} from cancellation "
                            f"(summand size {size:.3g}) exceeds {spec.precision_tol:.2g}")


def _check_increasing(y):
    y = tuple(int(v) for v in y)
    if any(y[i] >= y[i + 1] for i in range(len(y) - 1)):
        raise OrderingViolation("initial positions must be strictly increasing")
    if len(y) > MAX_PERMUTATION_N:
        raise InvalidParams(f"at most {MAX_PERMUTATION_N} particles")
    return y


def slot_integral(slots: Sequence[tuple], y: Sequence[int], t: float, q: float,
                  spec: ContourSpec) -> float:
    """sum_mu of the integral of A_mu prod_i k_i(xi_{mu(i)}) e^{sum (1/xi + q xi - 1 - q) t}.

    ``slots[i] = (kind, m)`` with kind 'x' giving k_i(xi) = xi^{m - y - 1}
    and kind 'm' giving xi^{m - y - 1}/(1 - xi), where y = y_{mu(i)}.
    """
    y = _check_increasing(y)
    N = len(y)
    if len(slots) != N:
        raise InvalidParams("one slot per particle")

    def integrand(xi):
        total = 0.0
        for mu in itertools.permutations(range(N)):
            term = a_sigma(mu, xi, q)
            for i, (kind, m) in enumerate(slots):
                z = xi[mu[i]]
                term = term * z ** (m - y[mu[i]] - 1)
                if kind == "m":
                    term = term / (1.0 - z)
            total = total + term
        return total * _exponent(xi, q, t)

    val, size, nodes = circle_quadrature(integrand, spec, N, q=q, with_size=True)
    _check_precision(size, nodes, N, spec, "slot integral")
    return _check_real(val, "slot integral", size)


def rainbow_transition_prob(target: RainbowState, y: Sequence[int], t: float, q: float,
                            spec: ContourSpec | None = None) -> float:
    """P((x, sigma) at time t) from the q-exchangeable law on y, for rainbow ASEP L^-.

    The prefactor uses the target permutation; the integral runs over an
    independent permutation mu with target positions sorted increasingly.
    """
    spec = spec or ContourSpec()
    if target.N != len(y):
        raise InvalidParams("target and initial particle numbers differ")
    if t < 0:
        raise InvalidParams("t must be nonnegative")
    X = sorted(target.positions)
    pref = q ** inversions(target.permutation) / q_factorial(target.N, q).to_float()
    return pref * slot_integral([("x", x) for x in X], y, t, q, spec)


def leftmost_particle_pmf(x: int, Y: Sequence[int], t: float, q: float,
                          spec: ContourSpec | None = None) -> float:
    """P(x_1(t) = x) for N-particle ASEP with right rate 1 and left rate q.

    Written with p = 1/(1 + q), 1 - p = q/(1 + q) and time (1 + q) t:
    p^{N(N-1)/2} times the integral of
    prod_{i<j} (xi_j - xi_i)/(p + (1-p) xi_i xi_j - xi_i)
    (1 - prod xi)/prod(1 - xi_i) prod xi_i^{x - y_i - 1} e^{(p/xi_i + (1-p) xi_i - 1)(1+q)t}.
    """
    spec = spec or ContourSpec()
    Y = _check_increasing(Y)
    N = len(Y)
    p, s = 1.0 / (1.0 + q), q / (1.0 + q)
    tau = (1.0 + q) * t

    def integrand(xi):
        f = 1.0
        for i in range(N):
            for j in range(i + 1, N):
                f = f * (xi[j] - xi[i]) / _safe(p + s * xi[i] * xi[j] - xi[i])
        prod = 1.0
        for g in xi:
            prod = prod * g
        f = f * (1.0 - prod)
        for i, g in enumerate(xi):
            f = f / (1.0 - g) * g ** (x - Y[i] - 1) * np.exp((p / g + s * g - 1.0) * tau)
        return f

    val, size, nodes = circle_quadrature(integrand, spec, N, q=q, with_size=True)
    pref = p ** (N * (N - 1) / 2)
    _check_precision(pref * size, nodes, N, spec, "leftmost pmf")
    return pref * _check_real(val, "leftmost pmf", size)


# ---------------------------------------------------------------------------
# mixed position / threshold probabilities

@dataclass(frozen=True)
class ParticleQuery:
    """Query for twprop_probability and the batch mode.

    ``fixed[i]`` is the position of species i + 1 (i < K); ``thresholds``
    are M_{K+1} >= ... >= M_N for the remaining species.  ``mode`` is
    'mixed_twprop', 'joint_pmf' (K = N) or 'leftmost' (fixed = (x,)).
    """

    mode: str
    fixed: tuple
    thresholds: tuple
    y: tuple
    t: float
    q: float

    def __post_init__(self):
        object.__setattr__(self, "fixed", tuple(int(v) for v in self.fixed))
        object.__setattr__(self, "thresholds", tuple(int(v) for v in self.thresholds))
        object.__setattr__(self, "y", tuple(int(v) for v in self.y))
        if self.mode not in ("mixed_twprop", "joint_pmf", "leftmost"):
            raise InvalidParams(f"unknown mode {self.mode!r}")
        if not self.q > 0 or self.t < 0:
            raise InvalidParams("need q > 0 and t >= 0")

    @property
    def N(self) -> int:
        return len(self.y)

    @property
    def K(self) -> int:
        return len(self.fixed)

    def validate(self):
        _check_increasing(self.y)
        if self.mode == "leftmost":
            if self.K != 1 or self.thresholds:
                raise InvalidParams("leftmost queries take one fixed position and no thresholds")
            return
        if self.K + len(self.thresholds) != self.N:
            raise InvalidParams("fixed positions and thresholds must cover all species")
        if self.mode == "joint_pmf" and self.thresholds:
            raise InvalidParams("joint_pmf takes no thresholds")
        if len(set(self.fixed)) != self.K:
            raise OrderingViolation("fixed positions must be distinct")
        m = self.thresholds
        if any(m[i] < m[i + 1] for i in range(len(m) - 1)):
            raise OrderingViolation("thresholds must be nonincreasing")
        if m and any(x < m[0] for x in self.fixed):
            raise OrderingViolation("fixed positions must be >= every threshold")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("fixed", "thresholds", "y"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ParticleQuery":
        return cls(d["mode"], tuple(d.get("fixed", ())), tuple(d.get("thresholds", ())),
                   tuple(d["y"]), float(d["t"]), float(d["q"]))


def twprop_probability(query: ParticleQuery, spec: ContourSpec | None = None) -> float:
    """P(z_i(t) = x_i for i <= K, z_i(t) >= M_i for i > K) under rainbow ASEP L^-.

    Evaluated as q^{inv(sigma_K)}/[N]_q! times the slot integral whose slots
    are the thresholds in increasing order (kernel xi^{M - y - 1}/(1 - xi))
    followed by the fixed positions in increasing order.  sigma_K lists the
    fixed species from right to left.
    """
    spec = spec or ContourSpec()
    query.validate()
    if query.mode == "leftmost":
        return leftmost_particle_pmf(query.fixed[0], query.y, query.t, query.q, spec)
    q = query.q
    order = sorted(range(query.K), key=lambda i: query.fixed[i])
    sigma_K = tuple(i + 1 for i in reversed(order))
    slots = [("m", m) for m in sorted(query.thresholds)]
    slots += [("x", query.fixed[i]) for i in order]
    pref = q ** inversions(sigma_K) / q_factorial(query.N, q).to_float()
    return pref * slot_integral(slots, query.y, query.t, q, spec)


def telescoping_sum(query: ParticleQuery, spec: ContourSpec | None = None,
                    tail_tol: float = 1e-10) -> tuple[float, float, int]:
    """Sum the (K+1)-form over x_{K+1} >= M_{K+1} for a K-form query.

    Positions held by the other fixed species are skipped.  The sum stops
    once the geometric tail bound r^d/(1 - r) beyond the rightmost initial
    position drops below ``tail_tol``.  Returns (sum, tail bound, terms).
    """
    spec = spec or ContourSpec()
    query.validate()
    if not query.thresholds:
        raise InvalidParams("the query has no threshold to telescope")
    r = spec.radius_for(query.q)
    depth = math.ceil(math.log(tail_tol * (1.0 - r)) / math.log(r))
    M_next = query.thresholds[0]
    top = max([*query.y, M_next, *query.fixed]) + depth
    total, terms = 0.0, 0
    for x in range(M_next, top + 1):
        if x in query.fixed:
            continue
        q2 = ParticleQuery("mixed_twprop", query.fixed + (x,), query.thresholds[1:], query.y,
                           query.t, query.q)
        total += twprop_probability(q2, spec)
        terms += 1
    return total, r ** depth / (1.0 - r), terms


# ---------------------------------------------------------------------------
# algebraic identities

def _perm_sign(p) -> int:
    return -1 if inversions(p) % 2 else 1


def symmetrization_residual(xi: Sequence[complex], alpha: float, beta: float) -> float:
    """|LHS - RHS| of the symmetrization identity over S_N.

    LHS = sum_sigma sgn(sigma) prod_{i<j}(alpha + beta xi_s(i) xi_s(j) - xi_s(i))
          prod_k xi_s(k)^k / prod_k (1 - xi_s(k) ... xi_s(N))   (k counted from 0)
    RHS = alpha^{N(N-1)/2} prod_{i<j}(xi_j - xi_i) / prod_j (1 - xi_j).
    """
    if abs(alpha + beta - 1.0) > 1e-12:
        raise InvalidParams("alpha + beta must equal 1")
    xi = [complex(z) for z in xi]
    N = len(xi)
    lhs = 0.0
    for s in itertools.permutations(range(N)):
        v = complex(_perm_sign(s))
        for i in range(N):
            for j in range(i + 1, N):
                v *= alpha + beta * xi[s[i]] * xi[s[j]] - xi[s[i]]
        for k in range(N):
            v *= xi[s[k]] ** k
            tail = 1.0 - math.prod(xi[s[m]] for m in range(k, N))
            if abs(tail) < POLE_GUARD:
                raise DenominatorPole("1 - product of xi vanishes")
            v /= tail
        lhs += v
    rhs = alpha ** (N * (N - 1) / 2) * math.prod(xi[j] - xi[i] for i in range(N)
                                                 for j in range(i + 1, N))
    rhs /= math.prod(1.0 - z for z in xi)
    return abs(lhs - rhs)


def swap_cancellation_residual(sigma: Sequence[int], k: int, xi: Sequence[complex],
                               alpha: float, beta: float) -> float:
    """|A_s (a + b u v - xi_s(k+1)) + A_s' (a + b u v - xi_s(k))| with s' = s o (k k+1).

    Here u v = xi_s(k) xi_s(k+1) and A uses q = beta/alpha.  ``k`` is 0-based.
    """
    q = beta / alpha
    s = tuple(sigma)
    s2 = list(s)
    s2[k], s2[k + 1] = s2[k + 1], s2[k]
    a, b = xi[s[k]], xi[s[k + 1]]
    mid = alpha + beta * a * b
    return abs(a_sigma(s, xi, q) * (mid - b) + a_sigma(tuple(s2), xi, q) * (mid - a))


def partial_fraction_residual(xi_i: complex, xi_j: complex, alpha: float, beta: float) -> float:
    """|1/(1 - xi_i) - q xi_j/(1 - xi_j) - (alpha + beta xi_i xi_j - xi_j)/(alpha (1 - xi_i)(1 - xi_j))|."""
    q = beta / alpha
    lhs = 1.0 / (1.0 - xi_i) - q * xi_j / (1.0 - xi_j)
    rhs = (alpha + beta * xi_i * xi_j - xi_j) / (alpha * (1.0 - xi_i) * (1.0 - xi_j))
    return abs(lhs - rhs)


# ---------------------------------------------------------------------------
# master-equation oracles on a finite window

def q_exchangeable_law(rb, y: Sequence[int], q: float) -> np.ndarray:
    """q^{inv(sigma)}/[N]_q! on the states (y, sigma) of a rainbow generator."""
    pos = tuple(sorted(y, reverse=True))
    p = np.zeros(rb.dimension)
    norm = q_factorial(len(y), q).to_float()
    for perm in itertools.permutations(range(1, len(y) + 1)):
        p[rb.index[RainbowState(pos, perm)]] = q ** inversions(perm) / norm
    return p


def rainbow_oracle(window, y: Sequence[int], t: float, q: float, sign: str = "-"):
    """(generator, distribution at time t) of rainbow ASEP from the q-exchangeable law on y."""
    rb = build_rainbow_generator(window, len(y), q, sign)
    p0 = q_exchangeable_law(rb, y, q)
    pt = expm_multiply(rb.matrix.T * t, p0) if t > 0 else p0
    return rb, pt


def oracle_probability(query: ParticleQuery, window, sign: str = "-") -> float:
    """The event of ``query`` under the rainbow master-equation oracle."""
    query.validate()
    rb, pt = rainbow_oracle(window, query.y, query.t, query.q, sign)
    total = 0.0
    for s, pr in zip(rb.states, pt):
        if query.mode == "leftmost":
            ok = min(s.positions) == query.fixed[0]
        else:
            ok = all(s.species_position(i + 1) == x for i, x in enumerate(query.fixed))
            ok = ok and all(s.species_position(query.K + 1 + i) >= m
                            for i, m in enumerate(query.thresholds))
        if ok:
            total += pr
    return float(total)


# ---------------------------------------------------------------------------
# block duality check

def _arrangements(counts: dict, L: int):
    """All words of length L with the given letter counts."""
    letters = sorted(counts)

    def rec(free, i):
        if i == len(letters):
            yield {}
            return
        for chosen in itertools.combinations(free, counts[letters[i]]):
            rest = [f for f in free if f not in chosen]
            for tail in rec(rest, i + 1):
                out = dict(tail)
                out[letters[i]] = chosen
                yield out

    for placement in rec(list(range(L)), 0):
        word = [0] * L
        for letter, where in placement.items():
            for w in where:
                word[w] = letter
        yield tuple(word)


def lumped_step_generator(window, c: Sequence[int], q: float):
    """Rainbow step data lumped into classes 1 + #{c_j <= species}, sign '+'.

    Site x >= 1 initially holds species x; sites <= 0 are empty.  Only the
    comparisons species >= c_j enter the observable, so classes suffice.
    The larger class moving right has rate 1, the smaller rate q.
    Returns (states, index, generator, initial state).
    """
    a, b = window
    init = tuple((1 + sum(1 for cj in c if cj <= x)) if x >= 1 else 0 for x in range(a, b + 1))
    counts = {}
    for v in init:
        counts[v] = counts.get(v, 0) + 1
    n_states = math.factorial(len(init))
    for v in counts.values():
        n_states //= math.factorial(v)
    if n_states > MAX_LUMPED_STATES:
        raise WindowTooLarge(f"{n_states} lumped states exceed {MAX_LUMPED_STATES}")
    states = list(_arrangements(counts, len(init)))
    index = {s: i for i, s in enumerate(states)}
    rows, cols, vals = [], [], []
    for s in states:
        i = index[s]
        for z in range(len(s) - 1):
            u, w = s[z], s[z + 1]
            if u == w:
                continue
            nxt = s[:z] + (w, u) + s[z + 2:]
            rows.append(i)
            cols.append(index[nxt])
            vals.append(1.0 if u > w else q)
    n = len(states)
    off = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
    gen = (off - sparse.diags(np.asarray(off.sum(axis=1)).ravel())).tocsr()
    return states, index, gen, init


def _lumped_dhat(s, a: int, placed, base: float) -> float:
    """Dhat on a lumped state; placed = [(site, j)] needs class >= j + 1 at site."""
    log_v = 0.0
    for z, j in placed:
        iz = z - a
        if s[iz] < j + 1:
            return 0.0
        n_minus = sum(1 for yy in range(iz + 1) if s[yy] >= j + 1)
        log_v += (-2 * z + 2 * n_minus) * math.log(base)
    return math.exp(log_v)


def blockdual_crosscheck(window, c: Sequence[int], M: Sequence[int], q: float, t: float,
                         spec: ContourSpec | None = None) -> tuple[float, float, float]:
    """(lhs, rhs, |lhs - rhs|) for the block duality observable.

    lhs = sum_tau q^{inv(word_tau)}/[n]_q! E[Dhat(eta(t), A_tau)] / Dhat(eta(0), A), where
    A_tau puts a label-tau(j) particle at M_j, the label j stands for species
    >= c_j, word_tau reads the labels by increasing position, and
    Dhat uses base q^{-1/2}.  The division removes the constant
    q^{sum_j (c_j - 1)} that Dhat takes on rainbow step data.
    rhs = (1/[n]_q!) x slot integral with initial positions sorted(M) and
    threshold slots sorted(c), i.e. the probability that n particles started
    at M all end up to the right of the matching c.
    """
    spec = spec or ContourSpec()
    c = tuple(int(v) for v in c)
    M = tuple(int(v) for v in M)
    n = len(c)
    if len(M) != n or n == 0:
        raise InvalidParams("need one threshold per species")
    if any(c[i] >= c[i + 1] for i in range(n - 1)) or c[0] < 1:
        raise OrderingViolation("species must satisfy 1 <= c_1 < ... < c_n")
    if any(M[i] < M[i + 1] for i in range(n - 1)):
        raise OrderingViolation("thresholds must satisfy M_1 >= ... >= M_n")
    if len(set(M)) != n:
        raise OrderingViolation("dual particles need distinct sites")
    a, b = window
    if not all(a <= m <= b for m in M):
        raise InvalidParams("thresholds must lie in the window")
    states, index, gen, init = lumped_step_generator(window, c, q)
    p0 = np.zeros(len(states))
    p0[index[init]] = 1.0
    pt = expm_multiply(gen.T * t, p0) if t > 0 else p0
    base = q ** -0.5
    norm = q_factorial(n, q).to_float()
    lhs = 0.0
    for tau in itertools.permutations(range(n)):
        placed = [(M[j], tau[j] + 1) for j in range(n)]
        word = [lab for _, lab in sorted(placed)]
        obs = np.array([_lumped_dhat(s, a, placed, base) for s in states])
        lhs += q ** inversions(word) / norm * float(np.dot(pt, obs))
    lhs /= base ** (2 * sum(1 - cj for cj in c))
    rhs = slot_integral([("m", v) for v in sorted(c)], sorted(M), t, q, spec) / norm
    return lhs, rhs, abs(lhs - rhs)


# ---------------------------------------------------------------------------
# batch mode

def evaluate_batch(text: str, spec: ContourSpec | None = None, oracle_window=None) -> str:
    """Evaluate a JSON array of ParticleQuery records.

    Each result carries the query, the value or the error type, and, when
    ``oracle_window`` is given, the oracle value and the gap.
    """
    spec = spec or ContourSpec()
    out = []
    for rec in json.loads(text):
        row = {"query": rec}
        try:
            qry = ParticleQuery.from_dict(rec)
            val = twprop_probability(qry, spec)
            row["value"] = val
            if oracle_window is not None:
                ref = oracle_probability(qry, oracle_window)
                row["oracle"] = ref
                row["gap"] = abs(val - ref)
        except (InvalidParams, OrderingViolation, NoConvergence, NonRealResult) as exc:
            row["error"] = type(exc).__name__
            row["message"] = str(exc)
        out.append(row)
    return json.dumps(out, sort_keys=True)
