"""q-special functions evaluated in a sign/log-magnitude representation.

Products such as q^{x(2x-1)} overflow double precision quickly when q > 1, so
every routine here returns a :class:`LogSignedReal`.  Sums of alternating
terms are rescaled to the largest magnitude and accumulated with
``math.fsum``.
"""
from __future__ import annotations

import math
import operator
import sys
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import mpmath

from .errors import DenominatorPole, InvalidParams, NonTerminating

# relative tolerance used to decide that 1 - a q^j vanishes, and that a
# parameter equals q^{-l}
ZERO_TOL = 1e-12
# |log magnitude| below which plain floats are considered safe
DIRECT_LOG_LIMIT = 40.0
# working precision (decimal digits) of the extended-precision path
EXTENDED_DPS = 60


@dataclass(frozen=True)
class LogSignedReal:
    """A real number stored as sign * exp(log_magnitude).

    ``sign`` is -1, 0 or +1.  When ``sign == 0`` the log magnitude is
    meaningless and kept at ``-inf``.  ``value`` optionally caches the plain
    float: a double log of size ~700 carries ~1e-13 relative error, so
    values built from floats keep their exact float through products and
    quotients as long as it stays a normal finite number.
    """

    sign: int
    log_magnitude: float = field(default=-math.inf)
    value: float | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.sign not in (-1, 0, 1):
            raise ValueError(f"sign must be -1, 0 or 1, got {self.sign}")
        if self.sign == 0:
            object.__setattr__(self, "log_magnitude", -math.inf)

    @classmethod
    def from_float(cls, x: float) -> "LogSignedReal":
        x = float(x)
        if x == 0.0:
            return ZERO
        if math.isnan(x):
            raise ValueError("cannot represent NaN")
        return cls(1 if x > 0 else -1, math.log(abs(x)), x)

    @classmethod
    def from_mpf(cls, x) -> "LogSignedReal":
        if x == 0:
            return ZERO
        return cls(1 if x > 0 else -1, float(mpmath.log(abs(x))))

    @classmethod
    def coerce(cls, x) -> "LogSignedReal":
        if isinstance(x, LogSignedReal):
            return x
        if isinstance(x, mpmath.mpf):
            return cls.from_mpf(x)
        return cls.from_float(x)

    def to_mpf(self):
        if self.sign == 0:
            return mpmath.mpf(0)
        return self.sign * mpmath.exp(mpmath.mpf(self.log_magnitude))

    @property
    def is_zero(self) -> bool:
        return self.sign == 0

    @property
    def is_direct(self) -> bool:
        """True when the value can be used as a plain float without overflow risk."""
        return self.sign == 0 or abs(self.log_magnitude) < DIRECT_LOG_LIMIT

    def to_float(self) -> float:
        if self.sign == 0:
            return 0.0
        if self.value is not None:
            return self.value
        if self.log_magnitude > 709.78:
            return self.sign * math.inf
        return self.sign * math.exp(self.log_magnitude)

    def __float__(self) -> float:
        return self.to_float()

    def __neg__(self):
        return LogSignedReal(-self.sign, self.log_magnitude,
                             None if self.value is None else -self.value)

    def __abs__(self):
        return LogSignedReal(abs(self.sign), self.log_magnitude,
                             None if self.value is None else abs(self.value))

    def _combine(self, other, s: int, log_mag: float, op):
        v = None
        if self.value is not None and other.value is not None:
            v = op(self.value, other.value)
            if not (math.isfinite(v) and abs(v) >= sys.float_info.min):
                v = None
        return LogSignedReal(s, log_mag, v)

    def __mul__(self, other):
        other = LogSignedReal.coerce(other)
        s = self.sign * other.sign
        if s == 0:
            return ZERO
        return self._combine(other, s, self.log_magnitude + other.log_magnitude, operator.mul)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = LogSignedReal.coerce(other)
        if other.sign == 0:
            raise ZeroDivisionError("division by a zero LogSignedReal")
        if self.sign == 0:
            return ZERO
        return self._combine(other, self.sign * other.sign,
                             self.log_magnitude - other.log_magnitude, operator.truediv)

    def __rtruediv__(self, other):
        return LogSignedReal.coerce(other) / self

    def __pow__(self, k: int):
        if not isinstance(k, int):
            raise TypeError("only integer powers are supported")
        if self.sign == 0:
            if k < 0:
                raise ZeroDivisionError("negative power of zero")
            return ONE if k == 0 else ZERO
        s = self.sign if k % 2 else 1
        return LogSignedReal(s, k * self.log_magnitude)

    def __add__(self, other):
        return lsr_sum([self, LogSignedReal.coerce(other)])

    __radd__ = __add__

    def __sub__(self, other):
        return lsr_sum([self, -LogSignedReal.coerce(other)])

    def __rsub__(self, other):
        return lsr_sum([LogSignedReal.coerce(other), -self])

    def __repr__(self):
        return f"LogSignedReal(sign={self.sign}, log_magnitude={self.log_magnitude!r})"


ZERO = LogSignedReal(0)
ONE = LogSignedReal(1, 0.0, 1.0)


def lsr_sum(terms: Iterable) -> LogSignedReal:
    """Compensated sum of LogSignedReal (or float) terms."""
    terms = [LogSignedReal.coerce(t) for t in terms]
    nz = [t for t in terms if t.sign != 0]
    if not nz:
        return ZERO
    top = max(t.log_magnitude for t in nz)
    total = math.fsum(t.sign * math.exp(t.log_magnitude - top) for t in nz)
    if total == 0.0:
        return ZERO
    return LogSignedReal(1 if total > 0 else -1, top + math.log(abs(total)))


def lsr_prod(factors: Iterable) -> LogSignedReal:
    out = ONE
    for f in factors:
        out = out * f
        if out.sign == 0:
            return ZERO
    return out


def _scaled(a: float, q: float, j: int) -> LogSignedReal:
    """a * q**j without overflow."""
    if a == 0.0:
        return ZERO
    s = (1 if a > 0 else -1) * (1 if (q > 0 or j % 2 == 0) else -1)
    return LogSignedReal(s, math.log(abs(a)) + j * math.log(abs(q)))


def _one_minus(x: LogSignedReal) -> LogSignedReal:
    """1 - x, reporting exact zero when the cancellation is within ZERO_TOL."""
    if x.sign == 0:
        return ONE
    if x.log_magnitude > 30.0:
        # |x| huge: 1 - x = -x (1 - 1/x)
        inv = x.sign * math.exp(-x.log_magnitude)
        return LogSignedReal(-x.sign, x.log_magnitude + math.log1p(-inv))
    xv = x.to_float()
    f = 1.0 - xv
    if abs(f) <= ZERO_TOL * max(1.0, abs(xv)):
        return ZERO
    if abs(xv) < 0.5:
        return LogSignedReal(1, math.log1p(-xv))
    return LogSignedReal.from_float(f)


def q_pochhammer(a: float, q: float, n: int) -> LogSignedReal:
    """(a; q)_n = prod_{j<n} (1 - a q^j)."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    out = ONE
    for j in range(n):
        out = out * _one_minus(_scaled(a, q, j))
        if out.sign == 0:
            return ZERO
    return out


def q_pochhammer_multi(params: Sequence[float], q: float, n: int) -> LogSignedReal:
    """(a_1, ..., a_r; q)_n, the product of the individual symbols."""
    return lsr_prod(q_pochhammer(a, q, n) for a in params)


def _q_integer_log(m: int, q: float) -> float:
    """log [m]_q for q > 0."""
    if q == 1.0:
        return math.log(m)
    if q > 1.0:
        r = 1.0 / q
        return (m - 1) * math.log(q) + math.log1p(-(r ** m)) - math.log1p(-r)
    return math.log1p(-(q ** m)) - math.log1p(-q)


def q_integer(m: int, q: float) -> LogSignedReal:
    """[m]_q = 1 + q + ... + q^{m-1}."""
    if m == 0:
        return ZERO
    if q > 0:
        return LogSignedReal(1, _q_integer_log(m, q))
    return LogSignedReal.from_float(sum(q ** i for i in range(m)))


def q_factorial(n: int, q: float) -> LogSignedReal:
    """[n]_q^! = prod_{m=1}^{n} [m]_q."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    return lsr_prod(q_integer(m, q) for m in range(1, n + 1))


def q_binomial(n: int, k: int, q: float) -> LogSignedReal:
    """Gaussian binomial (q;q)_n / ((q;q)_k (q;q)_{n-k}); zero outside 0 <= k <= n."""
    if k < 0 or k > n:
        return ZERO
    if q == 1.0:
        return LogSignedReal.from_float(math.comb(n, k))
    return (q_pochhammer(q, q, n)
            / (q_pochhammer(q, q, k) * q_pochhammer(q, q, n - k)))


def q_binomial_alt(n: int, k: int, q: float) -> LogSignedReal:
    """Second closed form (q^{-n};q)_k/(q;q)_k * (-q^n)^k * q^{-k(k-1)/2}."""
    if k < 0 or k > n:
        return ZERO
    sign = -1 if k % 2 else 1
    pref = LogSignedReal(sign, (n * k - 0.5 * k * (k - 1)) * math.log(q))
    return q_pochhammer(q ** -n, q, k) / q_pochhammer(q, q, k) * pref


@dataclass(frozen=True)
class QHypergeometricSpec:
    """Parameters of the series r+1 phi r (a_1..a_{r+1}; b_1..b_r; q, z).

    ``terminating_index`` is the exact-integer fast path: when given, the
    series is summed up to that index without searching the numerator
    parameters for a q^{-l}.  Parameters may be floats or mpmath numbers;
    the latter keep their precision on the extended path.
    """

    numerator_params: tuple
    denominator_params: tuple
    base: float
    argument: float
    terminating_index: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "numerator_params", tuple(self.numerator_params))
        object.__setattr__(self, "denominator_params", tuple(self.denominator_params))
        if self.base <= 0 or self.base == 1:
            raise InvalidParams("base must satisfy q > 0, q != 1")

    def termination_index(self) -> int:
        if self.terminating_index is not None:
            return int(self.terminating_index)
        return find_termination_index([float(a) for a in self.numerator_params],
                                      float(self.base))


def find_termination_index(params: Sequence[float], q: float) -> int:
    """Smallest l >= 0 such that some parameter equals q^{-l} (relative 1e-12)."""
    best = None
    lq = math.log(q)
    for a in params:
        if a <= 0:
            continue
        l = round(-math.log(a) / lq)
        if l < 0:
            continue
        target = q ** (-l)
        if abs(a - target) <= ZERO_TOL * max(abs(a), abs(target)):
            best = l if best is None else min(best, l)
    if best is None:
        raise NonTerminating(f"no numerator parameter of the form q^-l among {tuple(params)}")
    return best


def _sum_double(spec: QHypergeometricSpec, l: int) -> LogSignedReal:
    q = float(spec.base)
    nums = [float(a) for a in spec.numerator_params]
    dens = [float(b) for b in spec.denominator_params]
    z = LogSignedReal.from_float(float(spec.argument))
    term = ONE
    terms = [ONE]
    for n in range(l):
        num = lsr_prod(_one_minus(_scaled(a, q, n)) for a in nums)
        if num.sign == 0:
            break
        den = lsr_prod(_one_minus(_scaled(b, q, n)) for b in dens)
        if den.sign == 0:
            raise DenominatorPole(f"denominator Pochhammer vanishes at index {n + 1} <= {l}")
        term = term * num * z / (den * _one_minus(_scaled(1.0, q, n + 1)))
        terms.append(term)
    return lsr_sum(terms)


def _mp_one_minus(x):
    f = 1 - x
    if abs(f) <= mpmath.mpf(10) ** (-(EXTENDED_DPS - 15)) * max(1, abs(x)):
        return mpmath.mpf(0)
    return f


def _sum_extended(spec: QHypergeometricSpec, l: int) -> LogSignedReal:
    with mpmath.workdps(EXTENDED_DPS):
        q = mpmath.mpf(spec.base)
        nums = [mpmath.mpf(a) for a in spec.numerator_params]
        dens = [mpmath.mpf(b) for b in spec.denominator_params]
        z = mpmath.mpf(spec.argument)
        term = mpmath.mpf(1)
        total = mpmath.mpf(1)
        for n in range(l):
            qn = q ** n
            num = mpmath.fprod(_mp_one_minus(a * qn) for a in nums)
            if num == 0:
                break
            den = mpmath.fprod(_mp_one_minus(b * qn) for b in dens)
            if den == 0:
                raise DenominatorPole(f"denominator Pochhammer vanishes at index {n + 1} <= {l}")
            term = term * num * z / (den * (1 - qn * q))
            total += term
        return LogSignedReal.from_mpf(total)


def q_hypergeometric(spec: QHypergeometricSpec, precision: str = "double") -> LogSignedReal:
    """Sum of a terminating basic hypergeometric series.

    ``precision='double'`` accumulates log-scaled terms with ``math.fsum``;
    ``precision='extended'`` runs the same recursion in mpmath at
    ``EXTENDED_DPS`` digits.
    """
    l = spec.termination_index()
    if precision == "double":
        return _sum_double(spec, l)
    if precision == "extended":
        return _sum_extended(spec, l)
    raise ValueError(f"unknown precision {precision!r}")


def _base(q, precision):
    return mpmath.mpf(q) if precision == "extended" else float(q)


def q_hahn(n: int, x: int, alpha: float, beta: float, N: int, q: float,
           precision: str = "double") -> LogSignedReal:
    """q-Hahn polynomial P_n(q^{-x}; alpha, beta, N | q) as a 3phi2."""
    if not (0 <= n <= N and 0 <= x <= N):
        raise InvalidParams("need 0 <= n, x <= N")
    with mpmath.workdps(EXTENDED_DPS):
        Q = _base(q, precision)
        a, b = _base(alpha, precision), _base(beta, precision)
        spec = QHypergeometricSpec(
            (Q ** -n, a * b * Q ** (n + 1), Q ** -x), (a * Q, Q ** -N),
            Q, Q, terminating_index=min(n, x))
        return q_hypergeometric(spec, precision)


def quantum_q_krawtchouk(n: int, x: int, p: float, c: int, q: float,
                         precision: str = "double") -> LogSignedReal:
    """Quantum q-Krawtchouk polynomial K_n^qtm(q^{-x}; p, c; q) as a 2phi1."""
    if not (0 <= n <= c and 0 <= x <= c):
        raise InvalidParams("need 0 <= n, x <= c")
    with mpmath.workdps(EXTENDED_DPS):
        Q = _base(q, precision)
        P = _base(p, precision)
        spec = QHypergeometricSpec((Q ** -x, Q ** -n), (Q ** -c,), Q, P * Q ** (n + 1),
                                   terminating_index=min(n, x))
        return q_hypergeometric(spec, precision)


# The weights and norms below are only used by the orthogonality checks and
# are evaluated directly in mpmath.

def _qp(a, q, n):
    return mpmath.fprod(1 - a * q ** j for j in range(n))


def _binom2(n: int) -> int:
    return n * (n - 1) // 2


def _qhahn_weight(x, a, b, N, q):
    return (_qp(a * q, q, x) * _qp(q ** -N, q, x)
            / (_qp(q, q, x) * _qp(q ** -N / b, q, x)) * (a * b * q) ** (-x))


def _qhahn_norm(n, a, b, N, q):
    ab = a * b
    out = _qp(ab * q * q, q, N) / (_qp(b * q, q, N) * (a * q) ** N)
    out *= _qp(q, q, n) * _qp(ab * q ** (N + 2), q, n) * _qp(b * q, q, n)
    out /= _qp(a * q, q, n) * _qp(ab * q, q, n) * _qp(q ** -N, q, n)
    out *= (1 - ab * q) * (-a * q) ** n / (1 - ab * q ** (2 * n + 1))
    return out * q ** (_binom2(n) - N * n)


def _qtm_weight(x, p, N, q):
    return (_qp(p * q, q, N - x) / (_qp(q, q, x) * _qp(q, q, N - x))
            * (-1) ** (N - x) * q ** _binom2(x))


def _qtm_norm(n, p, N, q):
    out = (-1) ** n * p ** N * _qp(q, q, N - n) * _qp(q, q, n) * _qp(p * q, q, n)
    out /= _qp(q, q, N) ** 2
    return out * q ** (_binom2(N + 1) - _binom2(n + 1) + N * n)


def orthogonality_residual(family: str, **params) -> float:
    """Largest deviation from the orthogonality relation of a polynomial family.

    ``family='qhahn'`` takes ``N, alpha, beta, q``; ``family='qtm_krawtchouk'``
    takes ``N, p, q`` and requires p > q^{-N}.  The residual is the maximum
    over 0 <= m, n <= N of |sum_x w(x) P_m(x) P_n(x) - h_n delta_mn|, each
    entry divided by sqrt(|h_m h_n|) so the check does not depend on the
    overall scale of the weights.  Everything is summed in extended precision.
    """
    N = int(params["N"])
    with mpmath.workdps(EXTENDED_DPS):
        q = mpmath.mpf(params["q"])
        if family == "qhahn":
            a, b = mpmath.mpf(params["alpha"]), mpmath.mpf(params["beta"])
            weights = [_qhahn_weight(x, a, b, N, q) for x in range(N + 1)]
            poly = [[q_hahn(n, x, a, b, N, q, "extended").to_mpf() for x in range(N + 1)]
                    for n in range(N + 1)]
            norms = [_qhahn_norm(n, a, b, N, q) for n in range(N + 1)]
        elif family in ("qtm", "qtm_krawtchouk"):
            p = mpmath.mpf(params["p"])
            if not p > q ** (-N):
                raise InvalidParams(f"need p > q^-N, got p={params['p']}, q^-N={float(q ** -N)}")
            weights = [_qtm_weight(x, p, N, q) for x in range(N + 1)]
            poly = [[quantum_q_krawtchouk(n, x, p, N, q, "extended").to_mpf()
                     for x in range(N + 1)] for n in range(N + 1)]
            norms = [_qtm_norm(n, p, N, q) for n in range(N + 1)]
        else:
            raise InvalidParams(f"unknown family {family!r}")
        worst = mpmath.mpf(0)
        for m in range(N + 1):
            for n in range(N + 1):
                lhs = mpmath.fsum(weights[x] * poly[m][x] * poly[n][x] for x in range(N + 1))
                rhs = norms[n] if m == n else 0
                worst = max(worst, abs(lhs - rhs) / mpmath.sqrt(abs(norms[m] * norms[n])))
        return float(worst)


def qhahn_to_qtm_limit_error(N: int, p: float, q: float, alpha: float) -> float:
    """max over n, x of |P_n(q^{-x}; alpha, p, N | q) - K_n^qtm(q^{-x}; p, N; q)|."""
    err = 0.0
    for n in range(N + 1):
        for x in range(N + 1):
            a = q_hahn(n, x, alpha, p, N, q).to_float()
            b = quantum_q_krawtchouk(n, x, p, N, q).to_float()
            err = max(err, abs(a - b))
    return err
