"""Orthogonal duality functions for dynamic ASEP and the triangular rainbow duality.

Conventions used throughout (all sites are absolute lattice labels):

* original state xi (dynamic ASEP), dual state eta (ASEP with right rate
  1/q and left rate q);
* lambda_k = h^-_{k-1,0}(eta) = sum_{a <= j < k} (2 eta_j - 1), counted from
  the left edge a of the window;
* rho_k = h^+_{k+1}(xi) = rho + (k + 1) + 2 #{occupied j > k}, the height
  that drives the dynamic rates;
* the duality matrix D[eta, xi] satisfies D L_dyn^T = L_dual D, i.e.
  E_xi[D(eta, xi_t)] = E_eta[D(eta_t, xi)].

In the nearest-neighbour heights h^+_{k+1} = rho_eff + sum_{j>k}(2 xi_j - 1)
the base is rho_eff = rho + b + 1, with b the right edge.  The collapsed
constants c^v, C^v and the weights omega^p, omega_R^p are written in terms
of that base and |N| = number of sites.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.sparse.linalg import expm_multiply

from . import ctmc
from .errors import DenominatorPole, InvalidParams, WindowTooLarge
from .lattice import (ModelParams, OccupationConfig, RainbowState, build_asep_generator,
                      build_dynamic_generator, build_rainbow_generator, height_plus,
                      occupation_states, rainbow_states)
from .qspecial import (ONE, ZERO, LogSignedReal, lsr_prod, q_binomial, q_hahn, q_pochhammer,
                       quantum_q_krawtchouk)

MAX_DUALITY_SITES = 10
POLE_TOL = 1e-6


def _power(q: float, e: float) -> LogSignedReal:
    return LogSignedReal(1, e * math.log(q))


def _poch(a: float, q: float, n: int) -> LogSignedReal:
    return q_pochhammer(a, q, n)


def _check_denominator(value: LogSignedReal, what: str) -> LogSignedReal:
    if value.is_zero:
        raise DenominatorPole(f"vanishing denominator in {what}")
    return value


# ---------------------------------------------------------------------------
# parameters and heights

@dataclass(frozen=True)
class DualityParams:
    """Model parameters, the free parameter v and the dual capacities (all 1)."""

    model: ModelParams
    v: float = -0.5
    side_counts: tuple | None = None
    check_poles: bool = True

    def __post_init__(self):
        if self.v == 0:
            raise InvalidParams("v must be nonzero")
        if math.isinf(self.model.rho):
            raise InvalidParams("the orthogonal duality needs a finite rho")
        if self.side_counts is None:
            object.__setattr__(self, "side_counts", (1,) * self.model.size)
        if any(c != 1 for c in self.side_counts):
            raise InvalidParams("only capacity 1 is supported")
        if self.check_poles:
            near = pole_distance(self)
            if near < POLE_TOL:
                raise DenominatorPole(f"parameters within {near:.3g} of a Pochhammer zero")

    @property
    def q(self) -> float:
        return self.model.q

    @property
    def L(self) -> int:
        return self.model.size

    @property
    def rho_eff(self) -> float:
        """Base of the nearest-neighbour height at the right edge."""
        return self.model.rho + self.model.window[1] + 1

    def with_v(self, v: float) -> "DualityParams":
        return DualityParams(self.model, v, self.side_counts, self.check_poles)

    def to_dict(self) -> dict:
        return {"q": self.q, "rho": self.model.rho, "window": list(self.model.window), "v": self.v}


def dual_height(dual: OccupationConfig, k: int) -> int:
    """lambda_k = h^-_{k-1,0}(eta): sum of (2 eta_j - 1) over a <= j < k."""
    a = dual.window[0]
    return sum(2 * dual[j] - 1 for j in range(a, k))


def orig_height(orig: OccupationConfig, rho: float, k: int) -> float:
    """rho_k = h^+_{k+1}(xi)."""
    return height_plus(orig, rho, k + 1)


def _denominator_arguments(params: DualityParams):
    """(argument, base) pairs of every 1 - a q^j factor that can appear in a denominator."""
    q, v, L = params.q, params.v, params.L
    a, b = params.model.window
    rho = params.model.rho
    out = []
    for k in range(a, b + 1):
        left = k - a
        for lam in range(-left, left + 1, 2):
            for m in range(0, b - k + 1):
                rh = rho + k + 1 + 2 * m
                for n in (0, 1):
                    for x in (0, 1):
                        for j in range(x + n):
                            out.append(v * q ** (-2 * x - rh + lam + 2 + 2 * j))
                        if n == 1 and x == 1:
                            out.append(-v * q ** (rh + lam))
    re = params.rho_eff
    for x in range(L + 1):
        for j in range(L - x):
            out.append(v * q ** (-re + 2 * x - L + 1 + 2 * j))
        for j in range(x):
            out.append(-v * q ** (re - L + 1 + 2 * j))
    return out


def pole_distance(params: DualityParams) -> float:
    """Smallest relative distance |1 - a| / max(1, |a|) over the denominator arguments."""
    args = _denominator_arguments(params)
    return min((abs(1.0 - z) / max(1.0, abs(z)) for z in args), default=math.inf)


# ---------------------------------------------------------------------------
# one-site functions and products

def c_p(n: int, x: int, lam: float, rho: float, v: float, N: int, q: float) -> LogSignedReal:
    """The coefficient c_p(n, x; lambda, rho, v, N; q)."""
    Q = q * q
    num = (LogSignedReal.from_float(v) ** n
           * _poch(-v * q ** (rho + lam - N + 1), Q, x)
           * _poch(v * q ** (2 * n - rho + lam - N + 1), Q, N))
    den = _power(q, n * (n + rho + lam - N)) * _check_denominator(
        _poch(v * q ** (-2 * x - rho + lam + N + 1), Q, x + n), "c_p")
    return num / den


def one_site_p(n: int, x: int, lambda_h: float, rho_h: float, v: float, N: int, q: float,
               precision: str = "double") -> LogSignedReal:
    """p(n, x; lambda, rho, v, N; q) = c_p P_x(n; alpha, beta, N; q^2)."""
    if N != 1:
        raise InvalidParams("only N = 1 is supported")
    alpha = -v * q ** (rho_h + lambda_h - N - 1)
    beta = q ** (rho_h - lambda_h - N - 1) / v
    poly = q_hahn(x, n, alpha, beta, N, q * q, precision)
    return c_p(n, x, lambda_h, rho_h, v, N, q) * poly


def one_site_k(n: int, x: int, lambda_h: float, rho_h: float, v: float, N: int, q: float,
               precision: str = "double") -> LogSignedReal:
    """k^qtm(n, x; lambda, rho, v, N; q) = K_x^qtm(q^{-2n}; p_hat, N; q^2)."""
    p_hat = q ** (rho_h - lambda_h - N - 1) / v
    return quantum_q_krawtchouk(x, n, p_hat, N, q * q, precision)


def _check_pair(dual: OccupationConfig, orig: OccupationConfig, params: DualityParams):
    if dual.window != orig.window or dual.window != params.model.window:
        raise InvalidParams("dual and original states must live on the model window")


def duality_P_R(dual: OccupationConfig, orig: OccupationConfig, params: DualityParams,
                normalized: bool = False) -> LogSignedReal:
    """P_R^v(eta, xi) = prod_k p(eta_k, xi_k; lambda_k, rho_k, v, 1; q).

    With ``normalized=True`` the value is divided by P_R^v(empty, xi), which
    depends on xi only through |xi| and so is still a duality function.
    """
    _check_pair(dual, orig, params)
    q, v, rho = params.q, params.v, params.model.rho
    val = lsr_prod(one_site_p(dual[k], orig[k], dual_height(dual, k), orig_height(orig, rho, k),
                              v, 1, q) for k in orig.sites())
    if normalized:
        val = val / empty_dual_value(orig.count, params)
    return val


def empty_dual_value(orig_size: int, params: DualityParams) -> LogSignedReal:
    """P_R^v(empty, xi) = c^v(0, |xi|; 0, rho_eff) C^v(0, |xi|; 0, rho_eff)."""
    c, C = scaling_constants(0, orig_size, params, 0.0, params.rho_eff)
    return c * C


def duality_K_qtm(dual: OccupationConfig, orig: OccupationConfig, params: DualityParams) -> LogSignedReal:
    """K_qtm^v(eta, xi) with the rho-free heights h^+_{k+1,0}(xi) = sum_{j>k}(2 xi_j - 1)."""
    _check_pair(dual, orig, params)
    q, v = params.q, params.v
    b = orig.window[1]
    out = ONE
    for k in orig.sites():
        rk = sum(2 * orig[j] - 1 for j in range(k + 1, b + 1))
        out = out * one_site_k(dual[k], orig[k], dual_height(dual, k), rk, v, 1, q)
    return out


def scaling_constants(dual_size: int, orig_size: int, params: DualityParams, lambda_h: float,
                      rho_h: float) -> tuple[LogSignedReal, LogSignedReal]:
    """Collapsed c^v(|zeta|, |xi|; lambda, rho) and C^v(|zeta|, |xi|; lambda, rho)."""
    q, v, L = params.q, params.v, params.L
    Q = q * q
    if not (0 <= dual_size <= L and 0 <= orig_size <= L):
        raise InvalidParams("particle numbers must lie in [0, L]")
    c_num = _poch(v * q ** (lambda_h - rho_h + 2 * dual_size - L + 1), Q, L - dual_size)
    c_den = _poch(v * q ** (lambda_h - rho_h - 2 * orig_size + L + 1), Q, orig_size)
    a = -v * q ** (lambda_h + rho_h - L + 1)
    C_num = _poch(a, Q, orig_size)
    C_den = _poch(a, Q, dual_size)
    return (c_num / _check_denominator(c_den, "c^v"),
            C_num / _check_denominator(C_den, "C^v"))


def scaling_constants_product(zeta: OccupationConfig, xi: OccupationConfig, params: DualityParams,
                              lambda_h: float, rho_h: float) -> tuple[LogSignedReal, LogSignedReal]:
    """Site-product forms of c^v and C^v with heights based at (lambda_h, rho_h)."""
    q, v = params.q, params.v
    Q = q * q
    a, b = xi.window
    c = C = ONE
    for k in xi.sites():
        hp = rho_h + sum(2 * xi[j] - 1 for j in range(k + 1, b + 1))
        hm = lambda_h + sum(2 * zeta[j] - 1 for j in range(a, k))
        e = -hp + hm
        c = c * _poch(v * q ** (2 * zeta[k] + e), Q, 1) / _check_denominator(
            _poch(v * q ** (-2 * xi[k] + e + 2), Q, xi[k] + zeta[k]), "c^v")
        s = -v * q ** (hp + hm)
        C = C * _poch(s, Q, xi[k]) / _check_denominator(_poch(s, Q, zeta[k]), "C^v")
    return c, C


# ---------------------------------------------------------------------------
# weights

def omega_p(x: int, params: DualityParams) -> LogSignedReal:
    q, v, L, rho = params.q, params.v, params.L, params.rho_eff
    Q = q * q
    num = (LogSignedReal.from_float(v) ** (-2 * x) * _power(q, x * (2 * x - 1))
           * _poch(-v * q ** (rho - L + 1), Q, x))
    return num / _check_denominator(_poch(v * q ** (-rho + 2 * x - L + 1), Q, L - x), "omega^p")


def omega_R_p(x: int, params: DualityParams) -> LogSignedReal:
    q, v, L, rho = params.q, params.v, params.L, params.rho_eff
    Q = q * q
    return _poch(v * q ** (-rho - 2 * x + L + 1), Q, x) / _check_denominator(
        _poch(-v * q ** (rho - L + 1), Q, x), "omega_R^p")


def w_weight(dual: OccupationConfig, q: float) -> LogSignedReal:
    """w(eta; N; q) with sites numbered 1..L from the left edge."""
    out = ONE
    e1 = e2 = 0
    for i, n in enumerate(dual.occupancy, start=1):
        e1 += n
        e2 += n * i
        out = out * _power(q, n * (n - 1)) * q_binomial(1, n, q * q)
    return out * _power(q, e1 - 2 * e2)


def site_weight_W(x: int, q: float, rho: float) -> LogSignedReal:
    """W(x; q, 1, rho) as displayed (x = 0 gives 1/(1 + q^{-2 rho}))."""
    Q = q * q
    first = (1.0 + q ** (4 * x + 2 * rho - 2)) / (1.0 + q ** (2 * rho - 2))
    ratio = _poch(-q ** (2 * rho - 2), Q, x) / _check_denominator(_poch(-q ** (2 * rho + 2), Q, x), "W")
    tail = _power(q, -x * (2 * rho + 1 + x - 2)) / _poch(-q ** (-2 * rho), Q, 1)
    return LogSignedReal.from_float(first) * ratio * tail


def W_R(orig: OccupationConfig, params: DualityParams) -> LogSignedReal:
    q, rho = params.q, params.model.rho
    return lsr_prod(site_weight_W(orig[k], q, orig_height(orig, rho, k)) for k in orig.sites())


def dual_side_weight(dual: OccupationConfig, params: DualityParams) -> LogSignedReal:
    """omega^p(|eta|) w(eta)."""
    return omega_p(dual.count, params) * w_weight(dual, params.q)


def original_side_weight(orig: OccupationConfig, params: DualityParams,
                         rescaled: bool = False) -> LogSignedReal:
    """omega_R^p(|xi|) W_R(xi).

    ``rescaled=True`` drops omega_R^p, a constant on each sector of fixed
    particle number; what is left is the site product, which stays finite
    as the window grows.
    """
    if rescaled:
        return W_R(orig, params)
    return omega_R_p(orig.count, params) * W_R(orig, params)


# ---------------------------------------------------------------------------
# reports

@dataclass(frozen=True)
class DualityReport:
    residual: float
    worst_pair: tuple
    params_echo: DualityParams | None
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.residual >= 0:
            raise InvalidParams("residual must be nonnegative")

    def to_json(self) -> str:
        return json.dumps({"residual": self.residual,
                           "worst_pair": [list(p) for p in self.worst_pair],
                           "params": None if self.params_echo is None else self.params_echo.to_dict(),
                           "details": self.details}, sort_keys=True)


def _guard(params: DualityParams):
    if params.L > MAX_DUALITY_SITES:
        raise WindowTooLarge(f"{params.L} sites exceed the duality guard {MAX_DUALITY_SITES}")


def duality_matrix(params: DualityParams, fn: Callable = duality_P_R) -> tuple[np.ndarray, list]:
    """D[eta, xi] over all occupation states of the window (binary order)."""
    _guard(params)
    states = occupation_states(params.model.window)
    D = np.array([[fn(e, x, params).to_float() for x in states] for e in states])
    return D, states


def _worst(M: np.ndarray, states) -> tuple:
    i, j = np.unravel_index(int(np.argmax(np.abs(M))), M.shape)
    return states[i].occupancy, states[j].occupancy


def generator_duality_residual(params: DualityParams, which: str = "qhahn") -> DualityReport:
    """max |D L_orig^T - L_dual D| / max(1, max |D|).

    The original process is dynamic ASEP for ``qhahn`` and ASEP with right
    rate 1/q, left rate q for ``qtm`` (the rho -> infinity model); the dual
    is ASEP with right rate 1/q and left rate q in both cases.
    """
    q, window = params.q, params.model.window
    if which == "qhahn":
        D, states = duality_matrix(params, duality_P_R)
        L_orig = build_dynamic_generator(params.model).dense()
    elif which == "qtm":
        D, states = duality_matrix(params, duality_K_qtm)
        L_orig = build_asep_generator(window, 1.0 / q, q).dense()
    else:
        raise InvalidParams("which must be 'qhahn' or 'qtm'")
    L_dual = build_asep_generator(window, 1.0 / q, q).dense()
    diff = D @ L_orig.T - L_dual @ D
    scale = max(1.0, float(np.abs(D).max()))
    return DualityReport(float(np.abs(diff).max()) / scale, _worst(diff, states), params,
                         {"which": which, "orientation": "D L_orig^T = L_dual D", "scale": scale})


def orthogonality_residual_dual(params: DualityParams) -> DualityReport:
    """Deviation of both orthogonality sums from the identity.

    With a = omega^p w on the dual side and b = omega_R^p W_R on the
    original side, both diag(sqrt b) D^T diag(a) D diag(sqrt b) and
    diag(sqrt a) D diag(b) D^T diag(sqrt a) should equal the identity.
    """
    D, states = duality_matrix(params)
    a = np.array([dual_side_weight(s, params).to_float() for s in states])
    b = np.array([original_side_weight(s, params).to_float() for s in states])
    sa, sb = np.sqrt(np.abs(a)), np.sqrt(np.abs(b))
    # D^T diag(a) D = diag(1/b), so the scaled Gram matrix is diag(sign b)
    R1 = sb[:, None] * (D.T @ (a[:, None] * D)) * sb[None, :] - np.diag(np.sign(b))
    R2 = sa[:, None] * (D @ (b[:, None] * D.T)) * sa[None, :] - np.diag(np.sign(a))
    r1, r2 = float(np.abs(R1).max()), float(np.abs(R2).max())
    worst = _worst(R1, states) if r1 >= r2 else _worst(R2, states)
    return DualityReport(max(r1, r2), worst, params, {"eta_sum": r1, "xi_sum": r2})


# ---------------------------------------------------------------------------
# rescaled duality D_lambda^S used in the asymptotic argument

def _prefactor(S_size: int, xi_size: int, params: DualityParams) -> LogSignedReal:
    """(v^-2 q^-2rho)^{|S|} / (c^v(|S|,|xi|;0,0) C^v(|S|,|xi|;0,2rho)) with rho = rho_eff."""
    q, v, rho = params.q, params.v, params.rho_eff
    c, _ = scaling_constants(S_size, xi_size, params, 0.0, 0.0)
    _, C = scaling_constants(S_size, xi_size, params, 0.0, 2 * rho)
    base = LogSignedReal.from_float(v) ** -2 * _power(q, -2 * rho)
    return base ** S_size / (c * C)


def D_lambda(S: OccupationConfig, xi: OccupationConfig, params: DualityParams) -> LogSignedReal:
    """Prefactor times P_R^{v q^rho}(S, xi); equals 1 for empty S."""
    shifted = DualityParams(params.model, params.v * params.q ** params.rho_eff,
                            check_poles=False)
    return _prefactor(S.count, xi.count, params) * duality_P_R(S, xi, shifted)


def W_lambda(xi: OccupationConfig, S_size: int, params: DualityParams) -> LogSignedReal:
    shifted = DualityParams(params.model, params.v * params.q ** params.rho_eff,
                            check_poles=False)
    pre = _prefactor(S_size, xi.count, params)
    return original_side_weight(xi, shifted) / (pre * pre)


def n_lambda(S: OccupationConfig, params: DualityParams) -> LogSignedReal:
    shifted = DualityParams(params.model, params.v * params.q ** params.rho_eff,
                            check_poles=False)
    return ONE / dual_side_weight(S, shifted)


def B_function(s: int, j: int, v: float, xi: OccupationConfig, rho: float, q: float) -> float:
    """B(s, j, v, xi, rho) = 1 - (1 - q^{4h})/(1 + v q^{2h + 2j - 6}), h = h^+_{s+1}(xi)."""
    h = height_plus(xi, rho, s + 1)
    return 1.0 - (1.0 - q ** (4 * h)) / (1.0 + v * q ** (2 * h + 2 * j - 6))


def bcs_bound_report(params: DualityParams, sample_count: int = 200, seed: int = 0) -> DualityReport:
    """Smallest C_bar with |D_lambda^S(xi)| <= C_bar prod_{s_j in S, xi_{s_j} = 1} q^{2 h^+_{s_j+1}(xi)}.

    Pairs (S, xi) are drawn uniformly from the window's states; the empty
    dual is always included.  B-function magnitudes over the sampled
    occupied dual sites are reported alongside.
    """
    q, rho = params.q, params.model.rho
    window = params.model.window
    L = params.L
    rng = np.random.default_rng(seed)
    pairs = [(0, int(rng.integers(2 ** L)))]
    pairs += [(int(rng.integers(2 ** L)), int(rng.integers(2 ** L))) for _ in range(sample_count - 1)]
    c_bar, worst, b_max = 0.0, None, 0.0
    for si, xi_i in pairs:
        S = OccupationConfig.from_index(window, si)
        xi = OccupationConfig.from_index(window, xi_i)
        d = abs(D_lambda(S, xi, params))
        bound = ONE
        for j, s in enumerate(S.particles(), start=1):
            b_max = max(b_max, abs(B_function(s, j, params.v, xi, rho, q)))
            if xi[s]:
                bound = bound * _power(q, 2 * height_plus(xi, rho, s + 1))
        ratio = (d / bound).to_float()
        if ratio > c_bar:
            c_bar, worst = ratio, (S.occupancy, xi.occupancy)
    return DualityReport(c_bar, worst or ((), ()), params,
                         {"b_max": b_max, "samples": len(pairs), "violations": 0})


def fdta_bound_report(params_pair: tuple, F: Callable[[float], float], L_values: Sequence[float],
                      site: int = 0, dual_states: Sequence[OccupationConfig] | None = None) -> dict:
    """Tabulate the left sides of the two asymptotic inequalities.

    ``params_pair = (p_lambda, p_bar)`` share q, v and the window.  Time L
    runs the dynamic model with p_bar from step initial data, gamma(L) =
    1/F(L) and h(L)[y] = h_site^+(y)/F(L).  For each dual S and each L the
    table records eq1, eq2 (absolute-value sums), the signed sum
    E_x[D_lambda^S(x(L))] and the same expectation computed on the dual side
    by evolving S with the dual ASEP (only meaningful when lambda = lambda_bar).
    """
    p_lam, p_bar = params_pair
    if p_lam.model.window != p_bar.model.window or p_lam.q != p_bar.q or p_lam.v != p_bar.v:
        raise InvalidParams("the two parameter sets must share window, q and v")
    _guard(p_lam)
    window, q = p_lam.model.window, p_lam.q
    states = occupation_states(window)
    if dual_states is None:
        dual_states = states
    Qbar = build_dynamic_generator(p_bar.model)
    start = Qbar.index[OccupationConfig.step(window)]
    p0 = ctmc.Distribution.point_mass(Qbar.dimension, start)
    L_dual = build_asep_generator(window, 1.0 / q, q)
    same = p_lam.model.rho == p_bar.model.rho
    rows = []
    for S in dual_states:
        D_S = np.array([D_lambda(S, x, p_lam).to_float() for x in states])
        n_S = n_lambda(S, p_lam).to_float()
        W_bar = np.array([W_lambda(x, S.count, p_bar).to_float() for x in states])
        h = np.array([height_plus(x, p_bar.model.rho, site) for x in states])
        D_cols = np.array([[D_lambda(E, x, p_lam).to_float() for E in states] for x in states])
        seq = []
        for Lt in L_values:
            Qt = ctmc.master_equation_solve(Qbar, p0, Lt).probabilities
            inv_sqrt_n = abs(n_S) ** -0.5
            eq1 = float(np.sum(np.abs(h / F(Lt) * inv_sqrt_n * D_S * W_bar)))
            eq2 = float(np.sum(np.abs(inv_sqrt_n * D_S * Qt)))
            signed = float(np.dot(D_S, Qt))
            dual_path = None
            if same:
                # E_S[D(S(L), x)] averaged over the step start: evolve the dual column by column
                evolved = ctmc.expectation_evolve(L_dual, D_cols.T, Lt)
                dual_path = float(evolved[L_dual.index[S], start])
            seq.append(eq2 / F(Lt))
            rows.append({"S": list(S.occupancy), "L": Lt, "eq1": eq1, "eq2": eq2,
                         "eq2_signed": signed, "eq2_dual_path": dual_path})
        diffs = np.diff(seq)
        monotone = bool(np.all(diffs <= 1e-15) or np.all(diffs >= -1e-15))
        for r in rows[-len(L_values):]:
            r["gamma_M_monotone"] = monotone
    return {"params": [p_lam.to_dict(), p_bar.to_dict()], "site": site, "rows": rows}


# ---------------------------------------------------------------------------
# triangular duality for rainbow ASEP

def multispecies_Dhat(state: RainbowState, dual_sets: Sequence, base: float) -> LogSignedReal:
    """1_I prod_j prod_{z in A^j} base^{-2z + 2 N_z^{j,-}(state)}.

    ``dual_sets[j-1]`` is A^j.  N_z^{j,-} counts positions y <= z holding a
    species >= j.  With base = q^{-1/2} this is a self-duality of rainbow
    ASEP with right rate 1, left rate q and the larger species having
    priority (sign '+').
    """
    occ = state.occupation()
    log_total = 0.0
    for j, A in enumerate(dual_sets, start=1):
        for z in A:
            if occ.get(z, 0) < j:
                return ZERO
            n_minus = sum(1 for y, s in occ.items() if y <= z and s >= j)
            log_total += (-2 * z + 2 * n_minus) * math.log(base)
    return LogSignedReal(1, log_total)


def _labelled_dual_sets(dual_state: RainbowState, labels: Sequence[int], n: int) -> list:
    """Sets A^1..A^n of a dual rainbow state whose species i carries label labels[i-1]."""
    sets = [[] for _ in range(n)]
    for x, s in zip(dual_state.positions, dual_state.permutation):
        sets[labels[s - 1] - 1].append(x)
    return sets


def dhat_duality_residual(window, N: int, q: float, t: float, sign: str = "+") -> float:
    """max |E[Dhat(eta(t), A)] - E[Dhat(eta, A(t))]| over all starting pairs.

    The original process is rainbow ASEP with N species; the dual runs over
    every nonempty label set C of {1..N} with one particle per label, using
    the same rates and the same priority rule.  Expectations are computed
    by matrix exponentials on both sides; entries are relative to max |Dhat|.
    """
    if t > 2:
        raise InvalidParams("t must be <= 2")
    base = q ** -0.5
    orig = build_rainbow_generator(window, N, q, sign)
    worst = 0.0
    for size in range(1, N + 1):
        if size > window[1] - window[0] + 1:
            break
        dual = build_rainbow_generator(window, size, q, sign)
        for labels in itertools.combinations(range(1, N + 1), size):
            D = np.array([[multispecies_Dhat(s, _labelled_dual_sets(d, labels, N), base).to_float()
                           for d in dual.states] for s in orig.states])
            if t == 0:
                continue
            lhs = expm_multiply(orig.matrix * t, D)
            rhs = expm_multiply(dual.matrix * t, D.T).T
            scale = max(1.0, float(np.abs(D).max()))
            worst = max(worst, float(np.abs(lhs - rhs).max()) / scale)
    return worst
