"""Exact enumeration on small cycles.

States of an ``n``-cycle are encoded as ``n``-bit integers with bit ``x``
set iff ``spin(x) == +1``.  Everything here is computed from the rules
directly, with numpy over the full state space, and never calls the
simulator, so it can serve as ground truth for it.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.stats import poisson

from .dynamics import Params

__all__ = [
    "N_MAX",
    "GeneratorMatrix",
    "OracleReport",
    "build_generator",
    "check_reversal",
    "check_stationarity",
    "exact_drift",
    "exact_edge_rate",
    "exact_tagged_diffusion",
    "oracle_report",
    "product_measure",
    "reflect_states",
    "spin_table",
    "transient_distribution",
]

N_MAX = 12


def _check_n(n: int) -> None:
    if not 2 <= n <= N_MAX:
        raise ValueError(f"cycle size n={n} outside [2, {N_MAX}]")


@lru_cache(maxsize=None)
def spin_table(n: int) -> np.ndarray:
    """``(2**n, n)`` array of spins, row ``s`` decoding state ``s``."""
    states = np.arange(1 << n, dtype=np.int64)
    bits = (states[:, None] >> np.arange(n)) & 1
    out = np.where(bits == 1, 1, -1).astype(np.int8)
    out.setflags(write=False)
    return out


def product_measure(n: int, p: float) -> np.ndarray:
    """``Ber_p`` weights of all ``2**n`` states."""
    k = (spin_table(n) == 1).sum(axis=1)
    return p**k * (1 - p) ** (n - k)


def reflect_states(n: int) -> np.ndarray:
    """Permutation mapping each state to its mirror image ``x -> n - 1 - x``."""
    return np.array([int(format(s, f"0{n}b")[::-1], 2) for s in range(1 << n)], dtype=np.int64)


@lru_cache(maxsize=None)
def _transitions(n: int, direction: str):
    """For each clock ``(x, eta)`` the states where it fires and its target."""
    spins = spin_table(n)
    step = 1 if direction == "right" else -1
    out = {}
    for x in range(n):
        for eta in (1, -1):
            target = np.full(1 << n, -1, dtype=np.int64)
            active = spins[:, x] == eta
            for k in range(1, n):
                z = (x + step * k) % n
                hit = active & (target < 0) & (spins[:, z] == -eta)
                target[hit] = z
            states = np.flatnonzero(target >= 0)
            out[(x, eta)] = (states, target[states])
    return out


@dataclass
class GeneratorMatrix:
    n: int
    direction: str
    lambda_plus: float
    lambda_minus: float
    Q: sp.csr_matrix

    def dense(self) -> np.ndarray:
        return self.Q.toarray()

    def entries(self) -> dict:
        coo = self.Q.tocoo()
        return {(int(i), int(j)): float(v) for i, j, v in zip(coo.row, coo.col, coo.data) if v != 0}


def build_generator(n: int, params: Params, direction: str = "right") -> GeneratorMatrix:
    """Rate matrix of the Toom dynamics on the ``n``-cycle.

    ``direction="left"`` gives the left-moving (adjoint) dynamics.  Only
    ``params.lambda_plus``/``lambda_minus`` enter; ``params.ring_size`` is
    ignored in favour of ``n``.
    """
    _check_n(n)
    if direction not in ("right", "left"):
        raise ValueError("direction must be 'right' or 'left'")
    rows, cols, vals = [], [], []
    for (x, eta), (states, targets) in _transitions(n, direction).items():
        rate = params.lambda_plus if eta > 0 else params.lambda_minus
        if rate == 0 or states.size == 0:
            continue
        new = states ^ (1 << x) ^ (np.int64(1) << targets)
        rows.append(states)
        cols.append(new)
        vals.append(np.full(states.size, rate))
    N = 1 << n
    if rows:
        r, c, v = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    else:
        r = c = np.zeros(0, dtype=np.int64)
        v = np.zeros(0)
    off = sp.coo_matrix((v, (r, c)), shape=(N, N)).tocsr()
    off.sum_duplicates()
    diag = np.asarray(off.sum(axis=1)).ravel()
    Q = (off - sp.diags(diag)).tocsr()
    return GeneratorMatrix(n, direction, params.lambda_plus, params.lambda_minus, Q)


def check_stationarity(gen: GeneratorMatrix, p: float) -> float:
    """``max |pi Q|`` for ``pi = Ber_p``."""
    pi = product_measure(gen.n, p)
    return float(np.abs(gen.Q.T @ pi).max())


def check_reversal(right: GeneratorMatrix, left: GeneratorMatrix, p: float) -> float:
    """``max |pi(s) Q(s, s') - pi(s') Q*(s', s)|`` over all ordered pairs."""
    if right.n != left.n:
        raise ValueError("generators act on different cycles")
    pi = sp.diags(product_measure(right.n, p))
    flux = pi @ right.Q - (pi @ left.Q).T
    flux = flux.tocsr()
    return float(np.abs(flux.data).max()) if flux.nnz else 0.0


def exact_drift(n: int, params: Params, sign: int = 1) -> float:
    """Exact mean velocity of a push particle at site 0 on the ``n``-cycle.

    Average over ``Ber_p`` conditioned on ``spin(0) == sign`` of the summed
    rate times displacement of all clocks that move the particle: a
    same-sign clock at ``x`` whose run ``[x, x + r)`` ends in an
    opposite spin and contains 0 pushes it by ``+1``; an opposite-sign
    clock at ``x`` whose run ``[x, x + r)`` ends exactly at 0 moves it to
    ``x``, i.e. by ``-r``.
    """
    _check_n(n)
    spins = spin_table(n)
    p = params.p
    keep = spins[:, 0] == sign
    S = spins[keep]
    k = (S[:, 1:] == 1).sum(axis=1)
    w = p**k * (1 - p) ** (n - 1 - k)
    lam_same = params.rate(sign)
    lam_other = params.rate(-sign)
    total = np.zeros(S.shape[0])
    for x in range(n):
        for r in range(1, n):
            block = [(x + j) % n for j in range(r)]
            end = (x + r) % n
            same_run = np.all(S[:, block] == sign, axis=1) & (S[:, end] == -sign)
            if 0 in block:
                total += lam_same * same_run
            other_run = np.all(S[:, block] == -sign, axis=1) & (S[:, end] == sign)
            if end == 0:
                total -= lam_other * r * other_run
    return float(np.dot(w, total) / w.sum())


def exact_edge_rate(n: int, params: Params, edge: int = 0) -> float:
    """Exact ``Ber_p`` rate of executed jumps whose span crosses ``edge``."""
    _check_n(n)
    pi = product_measure(n, params.p)
    rate = 0.0
    for (x, eta), (states, targets) in _transitions(n, "right").items():
        span = (targets - x) % n
        d = (edge - x) % n
        crossing = (d >= 1) & (d <= span)
        rate += params.rate(eta) * pi[states[crossing]].sum()
    return float(rate)


def transient_distribution(gen: GeneratorMatrix, initial, t: float, tol: float = 1e-12, max_terms: int = 200_000) -> np.ndarray:
    """Law at time ``t`` by uniformization.

    ``exp(tQ) = sum_k Poisson(k; Lambda t) P**k`` with ``P = I + Q / Lambda``;
    the series is cut once the remaining Poisson mass is below ``tol``.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    v = np.asarray(initial, dtype=float).copy()
    if t == 0:
        return v
    exit_rates = -gen.Q.diagonal()
    lam = float(exit_rates.max())
    if lam == 0:
        return v
    mu = lam * t
    K = int(poisson.isf(tol, mu)) + 1
    if K > max_terms:
        raise ValueError(f"uniformization needs {K} terms, budget is {max_terms}")
    P = (sp.identity(gen.Q.shape[0], format="csr") + gen.Q / lam).T.tocsr()
    weights = poisson.pmf(np.arange(K + 1), mu)
    out = weights[0] * v
    for k in range(1, K + 1):
        v = P @ v
        out += weights[k] * v
    return out


def exact_tagged_diffusion(n: int, params: Params, plus_count: int, sign: int = 1) -> dict:
    """Exact drift and diffusion of a push particle on the ``n``-cycle.

    Works in one magnetization sector (``plus_count`` ``+`` spins), where
    the environment seen from the particle is an irreducible chain with
    uniform stationary law.  Returns

    * ``drift``: stationary mean velocity,
    * ``d1``: mean squared jump size per unit time,
    * ``d_exact``: the asymptotic variance rate, from the martingale
      decomposition with the solution ``u`` of ``-Q u = h - drift``,
    * ``d_jump``: ``d1 + 2 int_0^inf E[(h(s) - v) dY(0)] / dt``,
    * ``d_hh``: ``d1 + 2 int_0^inf Cov(h(s), h(0)) ds``.

    ``d_jump`` equals ``d_exact``; ``d_hh`` omits the correlation between a
    jump and the drift right after it and is generally different.
    """
    _check_n(n)
    envs = [e for e in itertools.product((1, -1), repeat=n - 1) if sum(v == 1 for v in (sign,) + e) == plus_count]
    if not envs:
        raise ValueError("empty sector")
    states = [(sign,) + e for e in envs]
    index = {s: i for i, s in enumerate(states)}
    N = len(states)
    trans = []
    for i, s in enumerate(states):
        for x in range(n):
            for eta in (1, -1):
                rate = params.rate(eta)
                if rate == 0 or s[x] != eta:
                    continue
                y = next(((x + k) % n for k in range(1, n) if s[(x + k) % n] == -eta), None)
                if y is None:
                    continue
                new = list(s)
                new[x], new[y] = -eta, eta
                span = (y - x) % n
                if eta == sign:
                    d = 1 if (0 - x) % n < span else 0
                else:
                    d = -span if y == 0 else 0
                env = tuple(new[(d + j) % n] for j in range(n))
                trans.append((i, index[env], rate, d))
    Q = np.zeros((N, N))
    for i, j, r, d in trans:
        Q[i, j] += r
        Q[i, i] -= r
    pi = np.full(N, 1.0 / N)
    h = np.zeros(N)
    for i, j, r, d in trans:
        h[i] += r * d
    v = float(pi @ h)
    d1 = float(sum(pi[i] * r * d * d for i, j, r, d in trans))
    A = np.vstack([-Q, pi])
    b = np.concatenate([h - v, [0.0]])
    u = np.linalg.lstsq(A, b, rcond=None)[0]
    d_exact = float(sum(pi[i] * r * (d + u[j] - u[i]) ** 2 for i, j, r, d in trans))
    d_jump = d1 + 2 * float(sum(pi[i] * r * d * u[j] for i, j, r, d in trans))
    d_hh = d1 + 2 * float(pi @ ((h - v) * u))
    return {"drift": v, "d1": d1, "d_exact": d_exact, "d_jump": d_jump, "d_hh": d_hh, "stationarity_residual": float(np.abs(pi @ Q).max())}


@dataclass
class OracleReport:
    n: int
    p: float
    lambda_plus: float
    stationarity_residual: float
    reversal_residual: float
    exact_drift: float
    exact_edge_rate: float

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "p": self.p,
            "lambdaPlus": self.lambda_plus,
            "stationarityResidual": self.stationarity_residual,
            "reversalResidual": self.reversal_residual,
            "exactDrift": self.exact_drift,
            "exactEdgeRate": self.exact_edge_rate,
        }


def oracle_report(n: int, params: Params) -> OracleReport:
    right = build_generator(n, params, "right")
    left = build_generator(n, params, "left")
    return OracleReport(
        n,
        params.p,
        params.lambda_plus,
        check_stationarity(right, params.p),
        check_reversal(right, left, params.p),
        exact_drift(n, params, 1),
        exact_edge_rate(n, params),
    )
