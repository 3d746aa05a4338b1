"""Spin configurations, Hamiltonian models, disorder sampling and covariances.

Every model is written as ``H(sigma) = sum_b J_b a_b(sigma) + H0(sigma)``
where ``a_b`` are bond features (scaled two-spin products).  For the Gaussian
models the generalized overlap is then ``c(sigma, tau) = a(sigma).a(tau) / N``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from collections.abc import Sequence as SequenceABC
from typing import Iterator, Sequence

import numpy as np

from glassid.errors import DimensionError, DomainError, SizeLimitError, UnsupportedModelError

MAX_ENUM_N = 24


@dataclass(frozen=True)
class SpinConfig:
    """One microstate of N Ising spins."""

    spins: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.spins) == 0:
            raise DomainError("a spin configuration needs at least one site")
        if any(s not in (-1, 1) for s in self.spins):
            raise DomainError(f"spins must be -1 or +1, got {self.spins}")

    @property
    def N(self) -> int:
        return len(self.spins)

    @classmethod
    def from_index(cls, k: int, N: int) -> "SpinConfig":
        return cls(tuple(1 if (k >> i) & 1 else -1 for i in range(N)))

    def index(self) -> int:
        return sum(1 << i for i, s in enumerate(self.spins) if s == 1)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.spins, dtype=np.int8)


@dataclass(frozen=True)
class ModelSpec:
    """Which Hamiltonian: ``kind`` is ``"SK"``, ``"EA"`` or ``"CW"``.

    SK and CW take ``N`` directly; EA takes side ``L``, dimension ``d`` and the
    ``periodic`` flag, with ``N = L**d``.
    """

    kind: str
    N: int = 0
    L: int = 0
    d: int = 1
    periodic: bool = True

    def __post_init__(self) -> None:
        if self.kind == "SK":
            if self.N < 2:
                raise DomainError("SK needs N >= 2")
        elif self.kind == "CW":
            if self.N < 1:
                raise DomainError("Curie-Weiss needs N >= 1")
        elif self.kind == "EA":
            if self.L < 2:
                raise DomainError("EA needs L >= 2")
            if self.d not in (1, 2):
                raise DomainError("EA dimension must be 1 or 2")
            object.__setattr__(self, "N", self.L**self.d)
        else:
            raise DomainError(f"unknown model kind {self.kind!r}")

    @classmethod
    def sk(cls, N: int) -> "ModelSpec":
        return cls("SK", N=N)

    @classmethod
    def ea(cls, L: int, d: int = 1, periodic: bool = True) -> "ModelSpec":
        return cls("EA", L=L, d=d, periodic=periodic)

    @classmethod
    def curie_weiss(cls, N: int) -> "ModelSpec":
        return cls("CW", N=N)

    @property
    def is_gaussian(self) -> bool:
        return self.kind in ("SK", "EA")

    @property
    def model_id(self) -> str:
        if self.kind == "EA":
            return f"EA(L={self.L},d={self.d},periodic={int(self.periodic)})"
        return f"{self.kind}(N={self.N})"

    @property
    def bonds(self) -> tuple[tuple[int, int], ...]:
        return _bonds(self)

    @property
    def n_bonds(self) -> int:
        return len(self.bonds)

    @property
    def bond_scale(self) -> float:
        """Prefactor in ``H = -scale * sum_b J_b s_i s_j``."""
        return 1.0 / math.sqrt(self.N) if self.kind == "SK" else 1.0


@lru_cache(maxsize=None)
def _bonds(model: ModelSpec) -> tuple[tuple[int, int], ...]:
    # 0-based site pairs; SK lexicographic i<j, EA site-major then dimension
    if model.kind == "CW":
        return ()
    if model.kind == "SK":
        N = model.N
        return tuple((i, j) for i in range(N) for j in range(i + 1, N))
    L, d = model.L, model.d
    out = []
    for s in range(model.N):
        coords = [(s // L**k) % L for k in range(d)]
        for k in range(d):
            if coords[k] == L - 1 and not model.periodic:
                continue
            nb = list(coords)
            nb[k] = (nb[k] + 1) % L
            out.append((s, sum(c * L**m for m, c in enumerate(nb))))
    return tuple(out)


@dataclass(frozen=True, eq=False)
class DisorderRealization:
    """Sampled couplings, one per bond in the model's bond order."""

    couplings: np.ndarray
    model_id: str
    seed: int | None = None
    _model: ModelSpec | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        arr = np.array(self.couplings, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(self, "couplings", arr)
        if self._model is not None and arr.shape != (self._model.n_bonds,):
            raise DimensionError(
                f"{self._model.model_id} has {self._model.n_bonds} bonds, got {arr.shape}"
            )

    @classmethod
    def for_model(
        cls, model: ModelSpec, couplings: Sequence[float], seed: int | None = None
    ) -> "DisorderRealization":
        return cls(np.asarray(couplings, dtype=np.float64), model.model_id, seed, model)

    @classmethod
    def empty(cls, model: ModelSpec) -> "DisorderRealization":
        return cls.for_model(model, np.zeros(0))


def _check_disorder(model: ModelSpec, disorder: DisorderRealization | None) -> np.ndarray:
    if disorder is None:
        if model.n_bonds:
            raise DimensionError(f"{model.model_id} needs a disorder realization")
        return np.zeros(0)
    if disorder.model_id != model.model_id or disorder.couplings.shape != (model.n_bonds,):
        raise DimensionError(
            f"disorder for {disorder.model_id} ({disorder.couplings.size} couplings) "
            f"does not match {model.model_id} ({model.n_bonds} bonds)"
        )
    return disorder.couplings


def config_matrix(N: int) -> np.ndarray:
    """All 2**N configurations as an int8 array, row k = configuration index k."""
    if not 1 <= N <= MAX_ENUM_N:
        raise SizeLimitError(f"enumeration needs 1 <= N <= {MAX_ENUM_N}, got {N}")
    return _config_matrix(N)


@lru_cache(maxsize=8)
def _config_matrix(N: int) -> np.ndarray:
    k = np.arange(2**N, dtype=np.int64)[:, None]
    bits = (k >> np.arange(N, dtype=np.int64)) & 1
    out = (2 * bits - 1).astype(np.int8)
    out.setflags(write=False)
    return out


class ConfigSequence(SequenceABC):
    """Lazy ordered view of all 2**N configurations.

    Index k maps bit i of k to the spin at site i+1 (bit 0 -> -1, bit 1 -> +1).
    """

    def __init__(self, N: int) -> None:
        self.N = N
        self.array = config_matrix(N)

    def __len__(self) -> int:
        return self.array.shape[0]

    def __getitem__(self, k):
        if isinstance(k, slice):
            return [self[i] for i in range(*k.indices(len(self)))]
        return SpinConfig(tuple(int(s) for s in self.array[k]))

    def __iter__(self) -> Iterator[SpinConfig]:
        for k in range(len(self)):
            yield self[k]


def enumerate_configs(N: int) -> ConfigSequence:
    return ConfigSequence(N)


def bond_features(model: ModelSpec, configs: np.ndarray) -> np.ndarray:
    """``a_b(sigma) = -scale * s_i s_j`` for each row of ``configs``; shape (M, B)."""
    bonds = model.bonds
    if not bonds:
        return np.zeros((configs.shape[0], 0))
    idx = np.asarray(bonds)
    prod = configs[:, idx[:, 0]].astype(np.float64) * configs[:, idx[:, 1]]
    return -model.bond_scale * prod


@lru_cache(maxsize=16)
def feature_matrix(model: ModelSpec) -> np.ndarray:
    """Bond features of every enumerated configuration, shape (2**N, B)."""
    out = bond_features(model, config_matrix(model.N))
    out.setflags(write=False)
    return out


@lru_cache(maxsize=16)
def base_energies(model: ModelSpec) -> np.ndarray:
    """Disorder-free part of H over all configurations (Curie-Weiss only)."""
    if model.kind != "CW":
        out = np.zeros(2**model.N)
    else:
        m = config_matrix(model.N).sum(axis=1, dtype=np.float64) / model.N
        out = -model.N * m**2
    out.setflags(write=False)
    return out


def all_energies(model: ModelSpec, couplings: np.ndarray) -> np.ndarray:
    """H over all configurations; ``couplings`` may carry leading batch axes."""
    couplings = np.asarray(couplings, dtype=np.float64)
    if not model.n_bonds:
        return np.broadcast_to(base_energies(model), couplings.shape[:-1] + (2**model.N,))
    return couplings @ feature_matrix(model).T


def energy(model: ModelSpec, disorder: DisorderRealization | None, sigma: SpinConfig) -> float:
    J = _check_disorder(model, disorder)
    if sigma.N != model.N:
        raise DimensionError(f"configuration has {sigma.N} sites, model has {model.N}")
    s = sigma.as_array()[None, :]
    if model.kind == "CW":
        m = float(s.sum()) / model.N
        return -model.N * m * m
    return float(bond_features(model, s)[0] @ J)


def energy_per_particle(
    model: ModelSpec, disorder: DisorderRealization | None, sigma: SpinConfig
) -> float:
    return energy(model, disorder, sigma) / model.N


def overlap(sigma: SpinConfig, tau: SpinConfig) -> float:
    if sigma.N != tau.N:
        raise DimensionError("overlap of configurations with different N")
    return float(np.dot(sigma.as_array().astype(np.int64), tau.as_array())) / sigma.N


def covariance(model: ModelSpec, sigma: SpinConfig, tau: SpinConfig) -> float:
    """Generalized overlap ``c_N`` with ``E[H(sigma) H(tau)] = N c_N(sigma, tau)``."""
    if not model.is_gaussian:
        raise UnsupportedModelError("Curie-Weiss has no Gaussian covariance")
    if sigma.N != model.N or tau.N != model.N:
        raise DimensionError("configuration size does not match the model")
    if model.kind == "SK":
        q = overlap(sigma, tau)
        return q * q / 2 - 1 / (2 * model.N)
    s = sigma.as_array()[None, :]
    t = tau.as_array()[None, :]
    links = bond_features(model, s)[0] * bond_features(model, t)[0]
    return float(links.sum()) / model.N


@lru_cache(maxsize=8)
def covariance_matrix(model: ModelSpec) -> np.ndarray:
    """``c(sigma_a, sigma_b)`` over all configuration pairs, shape (2**N, 2**N)."""
    if not model.is_gaussian:
        raise UnsupportedModelError("Curie-Weiss has no Gaussian covariance")
    if model.kind == "SK":
        cfg = config_matrix(model.N).astype(np.float64)
        q = (cfg @ cfg.T) / model.N
        out = q * q / 2 - 1 / (2 * model.N)
    else:
        A = feature_matrix(model)
        out = (A @ A.T) / model.N
    out.setflags(write=False)
    return out


def sample_disorder(
    model: ModelSpec, rng: np.random.Generator, seed: int | None = None
) -> DisorderRealization:
    """Draw B independent standard Gaussian couplings from ``rng``."""
    if not model.is_gaussian:
        raise UnsupportedModelError("Curie-Weiss has no disorder")
    return DisorderRealization.for_model(model, rng.standard_normal(model.n_bonds), seed)


_KIND_TAG = {"SK": "SK", "EA": "EA", "CW": "CW"}


def write_disorder(path: str | Path, model: ModelSpec, disorder: DisorderRealization) -> None:
    J = _check_disorder(model, disorder)
    seed = "none" if disorder.seed is None else str(disorder.seed)
    lines = [f"model={_KIND_TAG[model.kind]} N={model.N} B={model.n_bonds} seed={seed}"]
    lines += [f"{x:.17g}" for x in J]
    Path(path).write_text("\n".join(lines) + "\n")


def read_disorder(path: str | Path, model: ModelSpec) -> DisorderRealization:
    text = Path(path).read_text().split("\n")
    header = dict(tok.split("=", 1) for tok in text[0].split())
    if set(header) != {"model", "N", "B", "seed"}:
        raise DomainError(f"bad disorder header: {text[0]!r}")
    if header["model"] != model.kind or int(header["N"]) != model.N:
        raise DimensionError(f"disorder file is for {header['model']} N={header['N']}")
    values = [float(x) for x in text[1:] if x.strip()]
    if len(values) != int(header["B"]):
        raise DimensionError(f"header says B={header['B']}, file has {len(values)} couplings")
    seed = None if header["seed"] == "none" else int(header["seed"])
    return DisorderRealization.for_model(model, values, seed)
