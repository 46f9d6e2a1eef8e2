"""Master-equation oracle and exact-event Monte Carlo.

The oracle propagates a distribution with ``scipy.sparse.linalg.expm_multiply``.
Simulation is Gillespie's direct method.  Two simulators are provided: a
generic pure-Python one driven by a local transition function, and a numba
kernel for dynamic ASEP on a large window that keeps bond rates in a
segment tree and updates only the three bonds touched by a jump.

Random numbers come from numpy's counter-based Philox generator keyed by the
seed, so distinct seeds give disjoint streams.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable

import numba as nb
import numpy as np
from scipy.sparse.linalg import expm_multiply

from .errors import DimensionMismatch, InvalidParams
from .lattice import RateMatrix, _rate_minus, _rate_plus

PRNG_NAME = "Philox"
NEGATIVE_CLAMP = 1e-12
MASS_TOL = 1e-10


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed) & (2 ** 64 - 1)))


@dataclass(frozen=True)
class Distribution:
    """Probability vector over the state index of a RateMatrix."""

    probabilities: np.ndarray

    def __post_init__(self):
        p = np.array(self.probabilities, dtype=float)
        if p.ndim != 1:
            raise DimensionMismatch("probabilities must be a vector")
        if p.min(initial=0.0) < -NEGATIVE_CLAMP:
            raise InvalidParams(f"negative probability {p.min()}")
        p[p < 0] = 0.0
        if abs(p.sum() - 1.0) > MASS_TOL:
            raise InvalidParams(f"probabilities sum to {p.sum()}")
        object.__setattr__(self, "probabilities", p)

    @classmethod
    def point_mass(cls, dim: int, index: int) -> "Distribution":
        p = np.zeros(dim)
        p[index] = 1.0
        return cls(p)

    def expectation(self, values) -> float:
        return float(np.dot(self.probabilities, values))


def master_equation_solve(Q: RateMatrix, p0: Distribution, t: float) -> Distribution:
    """p0 exp(tQ), clamped to be nonnegative and renormalized."""
    if t < 0:
        raise InvalidParams("t must be nonnegative")
    p = p0.probabilities
    if p.shape[0] != Q.dimension:
        raise DimensionMismatch(f"distribution has {p.shape[0]} entries, generator {Q.dimension}")
    if t == 0:
        return p0
    out = expm_multiply(Q.matrix.T * t, p)
    out[out < 0] = 0.0
    return Distribution(out / out.sum())


def expectation_evolve(Q: RateMatrix, f: np.ndarray, t: float) -> np.ndarray:
    """exp(tQ) f: column (or matrix of columns) of expectations E_x[f(X_t)]."""
    f = np.asarray(f, dtype=float)
    if f.shape[0] != Q.dimension:
        raise DimensionMismatch("observable length does not match the generator")
    if t == 0:
        return f.copy()
    return expm_multiply(Q.matrix * t, f)


@dataclass(frozen=True)
class Trajectory:
    times: tuple
    states: tuple
    seed: int
    t_end: float

    def state_at(self, t: float):
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.states[max(i, 0)]

    @property
    def final(self):
        return self.states[-1]


def gillespie_run(transitions: Callable[[Hashable], Iterable[tuple]], initial, t_end: float,
                  seed: int) -> Trajectory:
    """Exact trajectory of the chain with local rates ``transitions(state)``.

    ``times[0] = 0`` holds the initial state; later entries are jump times.
    """
    if t_end < 0:
        raise InvalidParams("t_end must be nonnegative")
    rng = _rng(seed)
    t = 0.0
    times, states = [0.0], [initial]
    state = initial
    while True:
        moves = [(s, r) for s, r in transitions(state) if r > 0]
        total = math.fsum(r for _, r in moves)
        if total <= 0:
            break
        t += rng.exponential(1.0 / total)
        if t > t_end:
            break
        u = rng.random() * total
        acc = 0.0
        nxt = moves[-1][0]
        for s, r in moves:
            acc += r
            if u < acc:
                nxt = s
                break
        state = nxt
        times.append(t)
        states.append(state)
    return Trajectory(tuple(times), tuple(states), int(seed), float(t_end))


@nb.njit(cache=True)
def _final_state_kernel(indptr, indices, cumrates, exit_rates, state, t, t_end, u):
    """Run from (state, t) using the uniforms in u.

    Returns (state, t, status) with status 0 when t_end is reached or the
    chain is absorbed and 1 when the buffer is exhausted.
    """
    pos = 0
    while True:
        R = exit_rates[state]
        if R <= 0.0:
            return state, t_end, 0
        if pos + 2 > u.shape[0]:
            return state, t, 1
        dt = -math.log(1.0 - u[pos]) / R
        if t + dt > t_end:
            return state, t_end, 0
        t += dt
        target = u[pos + 1] * R
        j = indptr[state]
        hi = indptr[state + 1]
        while j < hi - 1 and cumrates[j] <= target:
            j += 1
        state = indices[j]
        pos += 2


def _jump_tables(Q: RateMatrix):
    m = Q.matrix.tocsr().copy()
    m.setdiag(0.0)
    m.eliminate_zeros()
    m.sort_indices()
    exit_rates = np.asarray(m.sum(axis=1)).ravel()
    cum = np.empty_like(m.data)
    for i in range(m.shape[0]):
        lo, hi = m.indptr[i], m.indptr[i + 1]
        cum[lo:hi] = np.cumsum(m.data[lo:hi])
    return m.indptr.astype(np.int64), m.indices.astype(np.int64), cum, exit_rates


def sample_final_states(Q: RateMatrix, start: int, t_end: float, samples: int, seed: int,
                        buffer_size: int = 256) -> np.ndarray:
    """Indices of X_{t_end} for ``samples`` independent Gillespie runs on a finite chain.

    Run k uses the Philox stream keyed by ``seed + k``.  Within a run the
    uniforms alternate between holding times and jump choices.
    """
    indptr, indices, cum, exit_rates = _jump_tables(Q)
    out = np.empty(samples, dtype=np.int64)
    for k in range(samples):
        rng = _rng(seed + k)
        state, t = int(start), 0.0
        while True:
            state, t, status = _final_state_kernel(indptr, indices, cum, exit_rates, state, t,
                                                   float(t_end), rng.random(buffer_size))
            if status == 0:
                break
        out[k] = state
    return out


def empirical_distribution(indices: np.ndarray, dim: int) -> np.ndarray:
    return np.bincount(indices, minlength=dim) / len(indices)


def total_variation(p: np.ndarray, r: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(r)).sum())


# ---------------------------------------------------------------------------
# dynamic ASEP on a large window

@nb.njit(cache=True)
def _c_plus(h, q):
    if (h >= 0.0) == (q >= 1.0):
        u = q ** (-2.0 * h)
        return (1.0 + u) / (q * (1.0 + u / (q * q)))
    u = q ** (2.0 * h)
    return (u + 1.0) / (q * (u + q ** -2.0))


@nb.njit(cache=True)
def _c_minus(h, q):
    if (h >= 0.0) == (q >= 1.0):
        u = q ** (-2.0 * h)
        return q * (1.0 + u) / (1.0 + u * q * q)
    u = q ** (2.0 * h)
    return q * (u + 1.0) / (u + q * q)


@nb.njit(cache=True)
def _bond_rate(occ, h, i, q, const, right, left):
    # bond i joins sites i and i + 1; both directions use the height at i + 1
    if occ[i] == 1 and occ[i + 1] == 0:
        return right if const else _c_plus(h[i + 1], q)
    if occ[i] == 0 and occ[i + 1] == 1:
        return left if const else _c_minus(h[i + 1], q)
    return 0.0


@nb.njit(cache=True)
def _tree_set(tree, size, i, v):
    j = i + size
    tree[j] = v
    j //= 2
    while j >= 1:
        tree[j] = tree[2 * j] + tree[2 * j + 1]
        j //= 2


@nb.njit(cache=True)
def _tree_find(tree, size, u):
    j = 1
    while j < size:
        if u < tree[2 * j]:
            j = 2 * j
        else:
            u -= tree[2 * j]
            j = 2 * j + 1
    return j - size


@nb.njit(cache=True, nogil=True)
def _height_kernel(occ, h, tree, size, q, const, right, left, t, t_end, u):
    """Advance until t_end, buffer exhaustion (status 1) or a boundary jump (status 2)."""
    n_bonds = occ.shape[0] - 1
    pos = 0
    while True:
        R = tree[1]
        if R <= 0.0:
            return t_end, 0
        if pos + 2 > u.shape[0]:
            return t, 1
        dt = -math.log(1.0 - u[pos]) / R
        if t + dt > t_end:
            return t_end, 0
        t += dt
        i = _tree_find(tree, size, u[pos + 1] * R)
        if i >= n_bonds:
            i = n_bonds - 1
        pos += 2
        if tree[size + i] <= 0.0:
            # rounding at the top of the cumulative sum picked an idle bond
            continue
        if occ[i] == 1:
            occ[i] = 0
            occ[i + 1] = 1
            h[i + 1] += 2.0
        else:
            occ[i] = 1
            occ[i + 1] = 0
            h[i + 1] -= 2.0
        if i == 0 or i == n_bonds - 1:
            return t, 2
        for k in range(i - 1, i + 2):
            _tree_set(tree, size, k, _bond_rate(occ, h, k, q, const, right, left))


def light_cone_half_width(q: float, t: float) -> int:
    """Half width L_win = ceil((1 + q) t + 10 sqrt(t)), at least 4."""
    return max(4, math.ceil((1.0 + q) * t + 10.0 * math.sqrt(t)))


@dataclass(frozen=True)
class HeightModel:
    """Dynamic ASEP at (q, rho), or constant-rate ASEP with right 1/q and left q.

    Infinite rho uses the limiting constant rates; heights are then reported
    with offset 0 in place of rho.
    """

    q: float
    rho: float = 0.0
    kind: str = "dynamic"

    def __post_init__(self):
        if not self.q > 0:
            raise InvalidParams("q must be positive")
        if self.kind not in ("dynamic", "asep"):
            raise InvalidParams("kind must be 'dynamic' or 'asep'")

    @property
    def constant_rates(self):
        """(right, left) when rates do not depend on the height, else None."""
        if self.kind == "asep":
            return 1.0 / self.q, self.q
        if math.isinf(self.rho):
            return _rate_plus(self.rho, self.q), _rate_minus(self.rho, self.q)
        return None

    @property
    def height_offset(self) -> float:
        return self.rho if self.kind == "dynamic" and not math.isinf(self.rho) else 0.0

    def to_dict(self) -> dict:
        return {"q": self.q, "rho": _json_real(self.rho), "kind": self.kind}


def _json_real(x: float):
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def simulate_height(model: HeightModel, t: float, site: int, seed: int,
                    half_width: int | None = None, buffer_size: int = 1 << 16):
    """One Gillespie run from step initial data on [-L_win, L_win].

    Returns (h_site^+ at time t, whether a jump touched the window boundary).
    """
    L = light_cone_half_width(model.q, t) if half_width is None else int(half_width)
    if not -L < site <= L:
        raise InvalidParams("site outside the simulation window")
    sites = np.arange(-L, L + 1)
    occ = (sites < 0).astype(np.int8)
    count_from = np.cumsum(occ[::-1])[::-1]
    h = model.height_offset + sites + 2.0 * count_from
    rates = model.constant_rates
    const = rates is not None
    right, left = rates if const else (0.0, 0.0)
    W = sites.shape[0]
    size = 1
    while size < W - 1:
        size *= 2
    tree = np.zeros(2 * size)
    for i in range(W - 1):
        tree[size + i] = _bond_rate(occ, h, i, model.q, const, right, left)
    for j in range(size - 1, 0, -1):
        tree[j] = tree[2 * j] + tree[2 * j + 1]
    rng = _rng(seed)
    clock, status = 0.0, 1
    while status == 1:
        clock, status = _height_kernel(occ, h, tree, size, model.q, const, right, left,
                                       clock, float(t), rng.random(buffer_size))
    return float(h[site + L]), status == 2


@dataclass(frozen=True)
class EnsembleStats:
    sample_count: int
    values: np.ndarray
    mean: float
    variance: float
    bin_edges: np.ndarray
    counts: np.ndarray
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_samples(cls, values, bin_width: float = 1.0, metadata: dict | None = None):
        v = np.asarray(values, dtype=float)
        if v.size == 0:
            raise InvalidParams("no samples")
        mean = math.fsum(v) / v.size
        var = math.fsum((v - mean) ** 2) / v.size
        lo = math.floor(v.min() / bin_width) * bin_width
        hi = lo + bin_width * (math.floor((v.max() - lo) / bin_width) + 1)
        edges = np.arange(lo, hi + 0.5 * bin_width, bin_width)
        counts, _ = np.histogram(v, bins=edges)
        return cls(int(v.size), v, mean, var, edges, counts, dict(metadata or {}))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sample_index", "value"])
        for i, x in enumerate(self.values):
            w.writerow([i, repr(float(x))])
        return buf.getvalue()

    def histogram_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_left", "bin_right", "count"])
        for a, b, c in zip(self.bin_edges[:-1], self.bin_edges[1:], self.counts):
            w.writerow([repr(float(a)), repr(float(b)), int(c)])
        return buf.getvalue()

    def summary(self) -> dict:
        return {"sample_count": self.sample_count, "mean": self.mean, "var": self.variance,
                "bins": {"edges": [float(e) for e in self.bin_edges],
                         "counts": [int(c) for c in self.counts]},
                "metadata": self.metadata}

    def to_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True)


def ensemble_height_stats(model: HeightModel, t: float, site: int = 0, samples: int = 100,
                          base_seed: int = 0, bin_width: float = 1.0,
                          half_width: int | None = None, workers: int = 1) -> EnsembleStats:
    """Samples of h_site^+(t) from step initial data, seeds base_seed .. base_seed + samples - 1.

    Samples whose window boundary was touched are dropped and counted in
    the metadata.  Worker threads only change wall time, never the output.
    """
    if samples < 1:
        raise InvalidParams("samples must be >= 1")
    L = light_cone_half_width(model.q, t) if half_width is None else int(half_width)
    seeds = [base_seed + k for k in range(samples)]

    def one(seed):
        return simulate_height(model, t, site, seed, L)

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, seeds))
    else:
        results = [one(s) for s in seeds]
    values = [v for v, touched in results if not touched]
    touches = sum(1 for _, touched in results if touched)
    if not values:
        raise InvalidParams(f"all {samples} samples reached the window boundary; "
                            "enlarge half_width")
    meta = {"model": model.to_dict(), "t": t, "site": site, "samples": samples,
            "base_seed": base_seed, "half_width": L, "prng": PRNG_NAME,
            "boundary_touches": touches, "bin_width": bin_width}
    return EnsembleStats.from_samples(values, bin_width, meta)
