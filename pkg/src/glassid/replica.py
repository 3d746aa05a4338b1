"""Replica product states and exact overlap-monomial expectations.

A monomial ``prod c_{i,j}^k`` under the product state ``omega x ... x omega``
is a sum over n-tuples of configurations.  Rather than forming the 2**(nN)
sum, replicas are eliminated one at a time along the monomial's interaction
graph: a leaf replica collapses into a vector message on its neighbour, a
degree-two replica into a pairwise (4**N) factor.  Anything wider is refused.
"""

from __future__ import annotations

import re
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np

from glassid.errors import DomainError, SizeLimitError
from glassid.gibbs import GibbsState
from glassid.spin_core import ModelSpec, covariance_matrix

MAX_REPLICAS = 6
MAX_DEGREE = 8
PAIRWISE_MAX_N = 13
CHAIN_MAX_N = 11


@dataclass(frozen=True)
class ReplicaMonomial:
    """``coefficient * prod (c_{i,j})^k`` over replicas 1..n."""

    n: int
    factors: tuple[tuple[int, int, int], ...] = ()
    coefficient: float = 1.0

    def __post_init__(self) -> None:
        merged: dict[tuple[int, int], int] = defaultdict(int)
        for i, j, k in self.factors:
            i, j, k = int(i), int(j), int(k)
            if i > j:
                i, j = j, i
            if not 1 <= i < j <= self.n:
                raise DomainError(f"bad replica pair ({i},{j}) for n={self.n}")
            if k < 1:
                raise DomainError(f"exponent must be positive, got {k}")
            merged[(i, j)] += k
        if not 1 <= self.n <= MAX_REPLICAS:
            raise DomainError(f"replica count must be in 1..{MAX_REPLICAS}, got {self.n}")
        factors = tuple(sorted((i, j, k) for (i, j), k in merged.items()))
        if sum(k for _, _, k in factors) > MAX_DEGREE:
            raise DomainError(f"total degree exceeds {MAX_DEGREE}")
        object.__setattr__(self, "factors", factors)
        object.__setattr__(self, "coefficient", float(self.coefficient))

    @property
    def degree(self) -> int:
        return sum(k for _, _, k in self.factors)

    @property
    def replicas_used(self) -> int:
        return max((j for _, j, _ in self.factors), default=1)

    def with_n(self, n: int) -> "ReplicaMonomial":
        return ReplicaMonomial(n, self.factors, self.coefficient)

    def times(self, other: "ReplicaMonomial") -> "ReplicaMonomial":
        n = max(self.n, other.n)
        return ReplicaMonomial(n, self.factors + other.factors, self.coefficient * other.coefficient)

    def relabel(self, perm: dict[int, int]) -> "ReplicaMonomial":
        """Apply a replica permutation ``old label -> new label``."""
        return ReplicaMonomial(
            self.n, tuple((perm[i], perm[j], k) for i, j, k in self.factors), self.coefficient
        )

    def __str__(self) -> str:
        body = "*".join(f"c{i}{j}" + (f"^{k}" if k > 1 else "") for i, j, k in self.factors)
        return f"{self.coefficient:g}*{body}" if body else f"{self.coefficient:g}"


@dataclass(frozen=True)
class MonomialSum:
    terms: tuple[ReplicaMonomial, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        terms = tuple(self.terms)
        n = max((t.n for t in terms), default=1)
        object.__setattr__(self, "terms", tuple(t.with_n(n) for t in terms))

    @property
    def n(self) -> int:
        return max((t.n for t in self.terms), default=1)

    def __str__(self) -> str:
        return " + ".join(str(t) for t in self.terms) or "0"


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<factor>c(?P<i>\d)(?P<j>\d)(?:\^(?P<k>\d+))?)"
    r"|(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?(?:/\d+)?)"
    r"|(?P<op>[-+*]))"
)


def _tokens(text: str) -> list[tuple[str, object]]:
    out = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            raise DomainError(f"cannot parse {text!r} at position {pos}")
        pos = m.end()
        if m.group("factor"):
            i, j = int(m.group("i")), int(m.group("j"))
            if not i < j:
                raise DomainError(f"factor c{i}{j} needs I < J")
            out.append(("factor", (i, j, int(m.group("k") or 1))))
        elif m.group("num"):
            out.append(("num", Fraction(m.group("num"))))
        else:
            out.append(("op", m.group("op")))
    return out


def parse_monomials(text: str) -> MonomialSum:
    """Parse e.g. ``"c12^2*c23 - 4 c12*c23 + 3/2 c12*c34"``.

    Factors are ``cIJ`` with single-digit replica labels, joined by ``*`` or
    whitespace; an optional leading coefficient may be an integer, decimal or
    rational ``p/q``.  A term with no factors is a constant.
    """
    tokens = _tokens(text)
    if not tokens:
        raise DomainError("empty monomial expression")
    terms = []
    pos = 0
    while pos < len(tokens):
        sign = 1
        if tokens[pos] in (("op", "+"), ("op", "-")):
            sign = -1 if tokens[pos][1] == "-" else 1
            pos += 1
        elif terms:
            raise DomainError(f"missing operator between terms in {text!r}")
        coef = Fraction(1)
        if pos < len(tokens) and tokens[pos][0] == "num":
            coef = tokens[pos][1]
            pos += 1
            if pos < len(tokens) and tokens[pos] == ("op", "*"):
                pos += 1
        elif pos >= len(tokens) or tokens[pos][0] != "factor":
            raise DomainError(f"expected a coefficient or factor in {text!r}")
        factors = []
        while pos < len(tokens) and tokens[pos][0] == "factor":
            factors.append(tokens[pos][1])
            pos += 1
            if pos < len(tokens) and tokens[pos] == ("op", "*"):
                pos += 1
                if pos >= len(tokens) or tokens[pos][0] != "factor":
                    raise DomainError(f"dangling '*' in {text!r}")
        n = max((j for _, j, _ in factors), default=1)
        terms.append(ReplicaMonomial(n, tuple(factors), float(sign * coef)))
    return MonomialSum(tuple(terms))


@lru_cache(maxsize=32)
def covariance_power(model: ModelSpec, k: int) -> np.ndarray:
    out = covariance_matrix(model) ** k
    out.setflags(write=False)
    return out


def _check_size(model: ModelSpec, m: ReplicaMonomial) -> None:
    if not model.is_gaussian:
        raise DomainError("replica overlaps need a Gaussian model (SK or EA)")
    adj: dict[int, set[int]] = defaultdict(set)
    for i, j, _ in m.factors:
        adj[i].add(j)
        adj[j].add(i)
    largest = 0
    seen: set[int] = set()
    for start in adj:
        if start in seen:
            continue
        stack, comp = [start], 0
        seen.add(start)
        while stack:
            v = stack.pop()
            comp += 1
            for w in adj[v] - seen:
                seen.add(w)
                stack.append(w)
        largest = max(largest, comp)
    limit = CHAIN_MAX_N if largest >= 3 else PAIRWISE_MAX_N
    if largest >= 2 and model.N > limit:
        raise SizeLimitError(f"N={model.N} exceeds {limit} for monomial {m}")


def elimination_order(m: ReplicaMonomial) -> list[int]:
    """Greedy minimum-degree order over replicas that appear in factors."""
    adj: dict[int, set[int]] = {v: set() for v in range(1, m.n + 1)}
    for i, j, _ in m.factors:
        adj[i].add(j)
        adj[j].add(i)
    order = []
    while adj:
        v = min(adj, key=lambda u: (len(adj[u]), u))
        nbrs = adj.pop(v)
        for a in nbrs:
            adj[a].discard(v)
            adj[a] |= nbrs - {a}
        order.append(v)
    return order


def _message(u: np.ndarray, mat: np.ndarray) -> np.ndarray:
    """``sum_v u[..., v] mat[..., v, w]``."""
    if mat.ndim == 2:
        # one flat GEMM; stacked matmul falls back to slow per-row loops
        return (u.reshape(-1, u.shape[-1]) @ mat).reshape(u.shape[:-1] + mat.shape[1:])
    return (u[..., None, :] @ mat)[..., 0, :]


def contract(
    model: ModelSpec,
    probs: np.ndarray,
    m: ReplicaMonomial,
    cache: dict | None = None,
) -> np.ndarray:
    """Product-state expectation of ``m`` (without its coefficient).

    ``probs`` has shape ``(..., 2**N)``; leading axes are a batch of states
    sharing one model.  ``cache`` memoises leaf messages ``C^k @ p`` by k and
    must only be shared between calls on the same ``probs``.
    """
    batch = probs.shape[:-1]
    if not m.factors:
        return np.ones(batch)
    _check_size(model, m)
    unary: dict[int, np.ndarray | None] = {v: None for v in range(1, m.n + 1)}
    # pairwise factors keyed by replica pair; array indexed [x_first, x_second];
    # power is set while the factor is still a plain symmetric C**k
    pair: dict[frozenset, tuple[tuple[int, int], np.ndarray, int | None]] = {}
    for i, j, k in m.factors:
        pair[frozenset((i, j))] = ((i, j), covariance_power(model, k), k)
    scalar = np.ones(batch)
    for v in elimination_order(m):
        incident = [key for key in pair if v in key]
        u = probs if unary[v] is None else probs * unary[v]
        if not incident:
            scalar = scalar * u.sum(axis=-1)
        elif len(incident) == 1:
            (a, b), mat, power = pair.pop(incident[0])
            other = b if a == v else a
            oriented = mat if a == v else np.swapaxes(mat, -1, -2)
            if power is not None and unary[v] is None and cache is not None:
                msg = cache.get(("leaf", power))
                if msg is None:
                    msg = cache.setdefault(("leaf", power), _message(u, oriented))
            else:
                msg = _message(u, oriented)
            unary[other] = msg if unary[other] is None else unary[other] * msg
        elif len(incident) == 2:
            mats, others = [], []
            for key in incident:
                (a, b), mat, _ = pair.pop(key)
                others.append(b if a == v else a)
                mats.append(mat if a == v else np.swapaxes(mat, -1, -2))
            # new factor on (x, y): sum_v M1(v, x) u(v) M2(v, y)
            new = (np.swapaxes(mats[0], -1, -2) * u[..., None, :]) @ mats[1]
            x, y = others
            key = frozenset((x, y))
            if key in pair:
                (a0, b0), old, _ = pair.pop(key)
                new = new * (old if (a0, b0) == (x, y) else np.swapaxes(old, -1, -2))
            pair[key] = ((x, y), new, None)
        else:
            raise SizeLimitError(
                f"eliminating replica {v} of {m} needs a factor over {len(incident)} replicas"
            )
        unary[v] = None
    return scalar


def product_expectation(state: GibbsState, m: ReplicaMonomial) -> float:
    """``Omega(m)`` for one Gibbs state, including the coefficient."""
    return m.coefficient * float(contract(state.model, state.probs, m, state.kernels))


def monomial_sum_expectation(state: GibbsState, s: MonomialSum) -> float:
    return float(sum(product_expectation(state, t) for t in s.terms))


def brute_force_expectation(state: GibbsState, m: ReplicaMonomial) -> float:
    """Naive 2**(nN) sum; for checking :func:`product_expectation` at small N."""
    C = covariance_matrix(state.model)
    D = state.probs.size
    if D**m.n > 2**24:
        raise SizeLimitError("brute-force replica sum too large")
    grids = np.meshgrid(*[np.arange(D)] * m.n, indexing="ij")
    idx = [g.ravel() for g in grids]
    w = np.ones(idx[0].size)
    for r in range(m.n):
        w = w * state.probs[idx[r]]
    for i, j, k in m.factors:
        w = w * C[idx[i - 1], idx[j - 1]] ** k
    return m.coefficient * float(w.sum())
