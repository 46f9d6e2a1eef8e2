"""States, height functions, jump rates and sparse generators.

Covers dynamic ASEP, plain ASEP and rainbow multi-species ASEP on a finite
window [a, b] with closed boundaries.  Occupation states are enumerated in
binary little-endian order (bit i is site a + i); rainbow states are ordered
lexicographically by (positions, permutation).
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Sequence

import numpy as np
from scipy import sparse

from .errors import InvalidParams, WindowTooLarge

MAX_OCCUPATION_SITES = 14
MAX_RAINBOW_PARTICLES = 5
# C(|window|, N) N! states; covers every |window| <= 8, N <= 5 instance
MAX_RAINBOW_STATES = 20000


def _check_window(window) -> tuple[int, int]:
    a, b = int(window[0]), int(window[1])
    if b < a:
        raise InvalidParams(f"empty window [{a}, {b}]")
    return a, b


@dataclass(frozen=True)
class ModelParams:
    """Asymmetry q, dynamic parameter rho (may be +-inf) and lattice window."""

    q: float
    rho: float
    window: tuple
    species_counts: tuple | None = None

    def __post_init__(self):
        if not self.q > 0:
            raise InvalidParams("q must be positive")
        object.__setattr__(self, "window", _check_window(self.window))
        if self.species_counts is None:
            object.__setattr__(self, "species_counts", (1,) * self.size)
        if len(self.species_counts) != self.size or min(self.species_counts) < 1:
            raise InvalidParams("species_counts must give a capacity >= 1 per site")
        if any(c != 1 for c in self.species_counts):
            raise InvalidParams("only capacity 1 (exclusion) is supported")

    @property
    def size(self) -> int:
        return self.window[1] - self.window[0] + 1

    @property
    def lam(self) -> float:
        """The auxiliary parameter lambda = e^rho."""
        return math.exp(self.rho)

    def sites(self) -> range:
        return range(self.window[0], self.window[1] + 1)


@dataclass(frozen=True)
class OccupationConfig:
    """{0,1} occupancy on a window; sites right of the window are empty."""

    window: tuple
    occupancy: tuple
    right_vacuum: bool = True

    def __post_init__(self):
        object.__setattr__(self, "window", _check_window(self.window))
        occ = tuple(int(v) for v in self.occupancy)
        if len(occ) != self.window[1] - self.window[0] + 1:
            raise InvalidParams("occupancy length does not match the window")
        if any(v not in (0, 1) for v in occ):
            raise InvalidParams("occupancy values must be 0 or 1")
        object.__setattr__(self, "occupancy", occ)

    @classmethod
    def from_sites(cls, window, sites: Iterable[int]) -> "OccupationConfig":
        a, b = _check_window(window)
        occ = [0] * (b - a + 1)
        for s in sites:
            if not a <= s <= b:
                raise InvalidParams(f"site {s} outside window [{a}, {b}]")
            occ[s - a] = 1
        return cls((a, b), tuple(occ))

    @classmethod
    def empty(cls, window) -> "OccupationConfig":
        a, b = _check_window(window)
        return cls((a, b), (0,) * (b - a + 1))

    @classmethod
    def step(cls, window) -> "OccupationConfig":
        """Step initial condition: every site left of the origin occupied."""
        a, b = _check_window(window)
        return cls((a, b), tuple(1 if s < 0 else 0 for s in range(a, b + 1)))

    @classmethod
    def from_index(cls, window, index: int) -> "OccupationConfig":
        a, b = _check_window(window)
        return cls((a, b), tuple((index >> i) & 1 for i in range(b - a + 1)))

    @property
    def index(self) -> int:
        return sum(v << i for i, v in enumerate(self.occupancy))

    def __getitem__(self, site: int) -> int:
        a, b = self.window
        if site < a or site > b:
            return 0
        return self.occupancy[site - a]

    def sites(self) -> range:
        return range(self.window[0], self.window[1] + 1)

    def particles(self) -> list[int]:
        return [s for s in self.sites() if self[s]]

    @property
    def count(self) -> int:
        return sum(self.occupancy)

    def count_from(self, k: int) -> int:
        """Number of occupied sites j >= k."""
        a = self.window[0]
        return sum(self.occupancy[max(k - a, 0):])


@dataclass(frozen=True)
class RainbowState:
    """Positions x_1 > ... > x_N and a permutation sigma; species sigma(k) sits at x_k."""

    positions: tuple
    permutation: tuple

    def __post_init__(self):
        pos = tuple(int(x) for x in self.positions)
        perm = tuple(int(s) for s in self.permutation)
        if any(pos[i] <= pos[i + 1] for i in range(len(pos) - 1)):
            raise InvalidParams("positions must be strictly decreasing")
        if len(perm) != len(pos) or sorted(perm) != list(range(1, len(pos) + 1)):
            raise InvalidParams("permutation must be a bijection of {1..N}")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "permutation", perm)

    @property
    def N(self) -> int:
        return len(self.positions)

    def occupation(self) -> dict:
        """The map iota(x, sigma): site -> species."""
        return dict(zip(self.positions, self.permutation))

    def species_position(self, j: int) -> int:
        return self.positions[self.permutation.index(j)]

    @classmethod
    def from_species_positions(cls, species_positions: Sequence[int]) -> "RainbowState":
        """Build from z_j = position of species j (j = 1..N)."""
        order = sorted(range(len(species_positions)), key=lambda j: -species_positions[j])
        return cls(tuple(species_positions[j] for j in order), tuple(j + 1 for j in order))


def inversions(sigma: Sequence[int]) -> int:
    """Number of pairs i < j with sigma(i) > sigma(j)."""
    s = list(sigma)
    return sum(1 for i in range(len(s)) for j in range(i + 1, len(s)) if s[i] > s[j])


def height_plus(config: OccupationConfig, rho: float, k: int) -> float:
    """h_k^+ = rho + k + 2 #{occupied j >= k}; infinite rho propagates."""
    if math.isinf(rho):
        return rho
    return rho + k + 2 * config.count_from(k)


def _rate_plus(h: float, q: float) -> float:
    """q^{-1}(1 + q^{-2h})/(1 + q^{-2h-2}), stable for both signs of h."""
    if math.isinf(h):
        # q^{-2h} -> 0 when h and log q have the same sign
        return 1.0 / q if (h > 0) == (q > 1) else q
    if (h >= 0) == (q >= 1):
        u = q ** (-2 * h)
        return (1.0 + u) / (q * (1.0 + u / (q * q)))
    u = q ** (2 * h)
    return (u + 1.0) / (q * (u + q ** -2))


def _rate_minus(h: float, q: float) -> float:
    """q(1 + q^{-2h})/(1 + q^{-2h+2}), stable for both signs of h."""
    if math.isinf(h):
        return q if (h > 0) == (q > 1) else 1.0 / q
    if (h >= 0) == (q >= 1):
        u = q ** (-2 * h)
        return q * (1.0 + u) / (1.0 + u * q * q)
    u = q ** (2 * h)
    return q * (u + 1.0) / (u + q * q)


def dynamic_jump_rates(config: OccupationConfig, params: ModelParams, k: int) -> tuple[float, float]:
    """(right, left) jump rates of a particle at site k.

    Zero when site k is empty, the target is occupied, or the target lies
    outside the window.
    """
    a, b = params.window
    if not config[k] or not a <= k <= b:
        return 0.0, 0.0
    right = left = 0.0
    if k + 1 <= b and not config[k + 1]:
        right = _rate_plus(height_plus(config, params.rho, k + 1), params.q)
    if k - 1 >= a and not config[k - 1]:
        left = _rate_minus(height_plus(config, params.rho, k), params.q)
    return right, left


@dataclass(frozen=True)
class RateMatrix:
    """Sparse CTMC generator with its state index.

    Off-diagonal entries are nonnegative and every row sums to zero.
    """

    matrix: sparse.csr_matrix
    states: tuple
    index: dict = field(compare=False, repr=False)

    @classmethod
    def from_transitions(cls, states: Sequence[Hashable],
                         transitions: Callable[[Hashable], Iterable[tuple]]) -> "RateMatrix":
        states = tuple(states)
        index = {s: i for i, s in enumerate(states)}
        rows, cols, vals = [], [], []
        for s in states:
            i = index[s]
            for t, r in transitions(s):
                if r > 0 and t != s:
                    rows.append(i)
                    cols.append(index[t])
                    vals.append(float(r))
        n = len(states)
        off = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
        diag = sparse.diags(-np.asarray(off.sum(axis=1)).ravel())
        return cls((off + diag).tocsr(), states, index)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def max_row_sum(self) -> float:
        return float(np.abs(np.asarray(self.matrix.sum(axis=1)).ravel()).max(initial=0.0))

    def to_json(self) -> str:
        coo = self.matrix.tocoo()
        trip = sorted([int(i), int(j), float(v)] for i, j, v in zip(coo.row, coo.col, coo.data))
        return json.dumps({"dim": self.dimension, "triplets": trip})

    @classmethod
    def from_json(cls, text: str, states: Sequence[Hashable] | None = None) -> "RateMatrix":
        data = json.loads(text)
        n = int(data["dim"])
        trip = data["triplets"]
        rows = [t[0] for t in trip]
        cols = [t[1] for t in trip]
        vals = [t[2] for t in trip]
        m = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
        states = tuple(range(n)) if states is None else tuple(states)
        return cls(m, states, {s: i for i, s in enumerate(states)})


def occupation_states(window) -> list[OccupationConfig]:
    a, b = _check_window(window)
    L = b - a + 1
    if L > MAX_OCCUPATION_SITES:
        raise WindowTooLarge(f"{L} sites exceed the enumeration guard {MAX_OCCUPATION_SITES}")
    return [OccupationConfig.from_index((a, b), i) for i in range(2 ** L)]


def _swap(config: OccupationConfig, k: int) -> OccupationConfig:
    """Exchange the contents of sites k and k + 1."""
    occ = list(config.occupancy)
    i = k - config.window[0]
    occ[i], occ[i + 1] = occ[i + 1], occ[i]
    return OccupationConfig(config.window, tuple(occ))


def dynamic_transitions(params: ModelParams):
    """Transition function of dynamic ASEP: config -> [(config', rate)]."""
    a, b = params.window

    def trans(c: OccupationConfig):
        out = []
        for k in range(a, b):
            if c[k] and not c[k + 1]:
                out.append((_swap(c, k), _rate_plus(height_plus(c, params.rho, k + 1), params.q)))
            elif c[k + 1] and not c[k]:
                out.append((_swap(c, k), _rate_minus(height_plus(c, params.rho, k + 1), params.q)))
        return out

    return trans


def asep_transitions(window, right_rate: float, left_rate: float):
    a, b = _check_window(window)

    def trans(c: OccupationConfig):
        out = []
        for k in range(a, b):
            if c[k] and not c[k + 1]:
                out.append((_swap(c, k), right_rate))
            elif c[k + 1] and not c[k]:
                out.append((_swap(c, k), left_rate))
        return out

    return trans


def build_dynamic_generator(params: ModelParams) -> RateMatrix:
    """Generator of dynamic ASEP on the window with closed boundaries."""
    return RateMatrix.from_transitions(occupation_states(params.window), dynamic_transitions(params))


def build_asep_generator(window, right_rate: float, left_rate: float) -> RateMatrix:
    """Generator of nearest-neighbour exclusion with constant rates."""
    return RateMatrix.from_transitions(occupation_states(window),
                                       asep_transitions(window, right_rate, left_rate))


def rainbow_states(window, N: int) -> list[RainbowState]:
    a, b = _check_window(window)
    L = b - a + 1
    if N > L:
        raise InvalidParams("more particles than sites")
    if N > MAX_RAINBOW_PARTICLES or math.comb(L, N) * math.factorial(N) > MAX_RAINBOW_STATES:
        raise WindowTooLarge(f"rainbow state space guard: N <= {MAX_RAINBOW_PARTICLES} and "
                             f"at most {MAX_RAINBOW_STATES} states")
    out = []
    for pos in itertools.combinations(range(b, a - 1, -1), N):
        for perm in itertools.permutations(range(1, N + 1)):
            out.append(RainbowState(pos, perm))
    out.sort(key=lambda s: (s.positions, s.permutation))
    return out


def rainbow_transitions(window, q: float, sign: str):
    """Transition function of L^{+-}_rainbow.

    Right jumps carry rate 1 and left jumps rate q.  A swap of the species
    at x_r and x_{r+1} requires the two particles to be nearest neighbours;
    it has rate 1 when it changes inv(sigma) by +1 under sign '+' (by -1
    under sign '-') and rate q otherwise.
    """
    a, b = _check_window(window)
    if sign not in ("+", "-"):
        raise InvalidParams("sign must be '+' or '-'")
    up = 1 if sign == "+" else -1

    def trans(s: RainbowState):
        out = []
        pos, perm = s.positions, s.permutation
        occupied = set(pos)
        for k, x in enumerate(pos):
            if x + 1 <= b and x + 1 not in occupied:
                out.append((RainbowState(pos[:k] + (x + 1,) + pos[k + 1:], perm), 1.0))
            if x - 1 >= a and x - 1 not in occupied:
                out.append((RainbowState(pos[:k] + (x - 1,) + pos[k + 1:], perm), q))
        for r in range(len(pos) - 1):
            if pos[r] - pos[r + 1] != 1:
                continue
            new = list(perm)
            new[r], new[r + 1] = new[r + 1], new[r]
            change = 1 if perm[r] < perm[r + 1] else -1
            out.append((RainbowState(pos, tuple(new)), 1.0 if change == up else q))
        return out

    return trans


def build_rainbow_generator(window, N: int, q: float, sign: str) -> RateMatrix:
    """Generator of rainbow ASEP with N particles (species 1..N)."""
    return RateMatrix.from_transitions(rainbow_states(window, N), rainbow_transitions(window, q, sign))


def colorblind_project(state: RainbowState, window=None) -> OccupationConfig:
    """Forget species labels."""
    if window is None:
        if not state.positions:
            raise InvalidParams("a window is required for the empty state")
        window = (min(state.positions), max(state.positions))
    return OccupationConfig.from_sites(window, state.positions)


def lumping_residual(window, N: int, q: float, sign: str) -> float:
    """max |sum_{sigma'} L_rainbow((x,sigma),(x',sigma')) - L_ASEP(x,x')| over all entries."""
    rb = build_rainbow_generator(window, N, q, sign)
    asep = build_asep_generator(window, 1.0, q)
    proj = np.array([asep.index[colorblind_project(s, window)] for s in rb.states])
    m = rb.matrix.tocoo()
    lumped = np.zeros((rb.dimension, asep.dimension))
    np.add.at(lumped, (m.row, proj[m.col]), m.data)
    target = asep.dense()[proj]
    return float(np.abs(lumped - target).max(initial=0.0))


def reflect_generator_residual(params: ModelParams) -> float:
    """Compare dynamic ASEP at (q, rho) with its mirror image at (1/q, -rho).

    Site k maps to -k-1, so the window [a, b] becomes [-b-1, -a-1].  On a
    finite window the image height is -h only after the shift
    rho -> -rho - 2n, with n the conserved particle number, so the check runs
    sector by sector.  Returns the max entrywise difference.
    """
    a, b = params.window
    base = build_dynamic_generator(params).dense()
    states = occupation_states(params.window)
    image_window = (-b - 1, -a - 1)
    worst = 0.0
    for n in range(params.size + 1):
        sector = [i for i, c in enumerate(states) if c.count == n]
        mirrored = ModelParams(1.0 / params.q, -params.rho - 2 * n, image_window)
        other = build_dynamic_generator(mirrored)
        perm = [other.index[OccupationConfig.from_sites(image_window,
                                                        [-k - 1 for k in states[i].particles()])]
                for i in sector]
        diff = base[np.ix_(sector, sector)] - other.dense()[np.ix_(perm, perm)]
        worst = max(worst, float(np.abs(diff).max()))
    return worst
