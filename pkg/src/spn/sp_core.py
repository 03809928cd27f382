"""Soft proposal generation and coupling.

A proposal map is the stationary distribution of a random walk over the
N x N locations of a feature map. Edge weights combine feature dissimilarity
with a Gaussian falloff in grid distance, so probability mass accumulates at
locations that stand out from their neighbourhood. The map then multiplies
every channel of the feature maps (coupling) and the matching gradient.

Node ``a = i*N + j`` is grid cell ``(i, j)``. The transfer matrix is
column-stochastic: column ``b`` holds the outbound edge weights of node ``b``,
so ``M <- D @ M`` conserves mass.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.spatial.distance import cdist

from spn.errors import ConfigError, InputError

# K x N x N float64 array; kept as a plain ndarray.
FeatureMaps = np.ndarray


@dataclass(frozen=True)
class SpConfig:
    epsilon_factor: float = 0.15
    max_iters: int = 100
    convergence_tol: float = 1e-10
    damping: float = 0.0
    degenerate_threshold: float = 1e-12

    def __post_init__(self):
        if not self.epsilon_factor > 0:
            raise ConfigError(f"epsilon_factor must be > 0, got {self.epsilon_factor}")
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.convergence_tol > 0:
            raise ConfigError(f"convergence_tol must be > 0, got {self.convergence_tol}")
        if not 0.0 <= self.damping < 1.0:
            raise ConfigError(f"damping must lie in [0, 1), got {self.damping}")
        if self.degenerate_threshold < 0:
            raise ConfigError("degenerate_threshold must be >= 0")

    def epsilon(self, n: int) -> float:
        return self.epsilon_factor * n


@dataclass(frozen=True)
class TransferMatrix:
    entries: np.ndarray  # (N*N, N*N); entries[a, b] carries mass b -> a
    degenerate: bool = False

    @property
    def grid_size(self) -> int:
        return int(round(np.sqrt(self.entries.shape[0])))


@dataclass(frozen=True)
class ProposalMap:
    data: np.ndarray  # (N, N), non-negative, sums to 1
    iterations: int = 0
    residual: float = 0.0

    @classmethod
    def uniform(cls, n: int) -> "ProposalMap":
        return cls(np.full((n, n), 1.0 / (n * n)), 0, 0.0)

    @property
    def grid_size(self) -> int:
        return self.data.shape[0]


def spatial_kernel(di, dj, epsilon: float):
    """Gaussian weight ``exp(-(di^2 + dj^2) / (2 eps^2))`` of a grid offset.

    Works elementwise on arrays of offsets as well as on scalars.
    """
    if not epsilon > 0:
        raise ConfigError(f"epsilon must be > 0, got {epsilon}")
    di = np.asarray(di, dtype=np.float64)
    dj = np.asarray(dj, dtype=np.float64)
    out = np.exp(-(di * di + dj * dj) / (2.0 * epsilon * epsilon))
    return float(out) if out.ndim == 0 else out


@lru_cache(maxsize=32)
def _kernel_matrix(n: int, epsilon: float) -> np.ndarray:
    i, j = np.divmod(np.arange(n * n), n)
    k = spatial_kernel(i[:, None] - i[None, :], j[:, None] - j[None, :], epsilon)
    k = np.asarray(k, dtype=np.float64)
    k.setflags(write=False)
    return k


def _check_features(U) -> np.ndarray:
    U = np.asarray(U, dtype=np.float64)
    if U.ndim != 3 or U.shape[1] != U.shape[2] or U.shape[0] < 1 or U.shape[1] < 1:
        raise InputError(f"feature maps must have shape (K, N, N), got {U.shape}")
    if not np.all(np.isfinite(U)):
        raise InputError("feature maps contain non-finite values")
    return U


def build_transfer_matrix(U: FeatureMaps, cfg: SpConfig = SpConfig()) -> TransferMatrix:
    U = _check_features(U)
    k, n, _ = U.shape
    vectors = U.reshape(k, n * n).T  # one K-vector per node, row-major nodes
    dissim = cdist(vectors, vectors, metric="euclidean")
    raw = dissim * _kernel_matrix(n, cfg.epsilon(n))
    if raw.sum() < cfg.degenerate_threshold:
        return TransferMatrix(np.zeros_like(raw), degenerate=True)
    col = raw.sum(axis=0)
    # A node identical to every other one has no outbound weight; it sends
    # its mass uniformly so the matrix stays column-stochastic.
    empty = col <= 0.0
    if np.any(empty):
        raw[:, empty] = 1.0 / (n * n)
        col = raw.sum(axis=0)
    D = raw / col[None, :]
    if cfg.damping > 0.0:
        D = (1.0 - cfg.damping) * D + cfg.damping / (n * n)
    return TransferMatrix(D, degenerate=False)


def random_walk(D: TransferMatrix, cfg: SpConfig = SpConfig(), callback=None) -> ProposalMap:
    """Power iteration ``M <- D @ M`` from the uniform map.

    Stops once the L1 change between iterates drops below
    ``cfg.convergence_tol`` or after ``cfg.max_iters`` steps. ``callback``,
    if given, is called with every iterate (flattened) for inspection.
    """
    if D.degenerate:
        raise InputError("random_walk needs a non-degenerate transfer matrix")
    P = D.entries
    nodes = P.shape[0]
    n = D.grid_size
    M = np.full(nodes, 1.0 / nodes)
    steps = 0
    for steps in range(1, cfg.max_iters + 1):
        nxt = P @ M
        change = np.abs(nxt - M).sum()
        M = nxt
        if callback is not None:
            callback(M)
        if change < cfg.convergence_tol:
            break
    residual = float(np.abs(P @ M - M).sum())
    return ProposalMap(M.reshape(n, n), steps, residual)


def generate_proposal(U: FeatureMaps, cfg: SpConfig = SpConfig()) -> ProposalMap:
    D = build_transfer_matrix(U, cfg)
    if D.degenerate:
        return ProposalMap.uniform(np.shape(U)[1])
    return random_walk(D, cfg)


def _map_array(M) -> np.ndarray:
    return M.data if isinstance(M, ProposalMap) else np.asarray(M, dtype=np.float64)


def sp_forward(U: FeatureMaps, M) -> np.ndarray:
    """Couple feature maps with a proposal map: ``V[k] = U[k] * M``."""
    U = np.asarray(U, dtype=np.float64)
    m = _map_array(M)
    if U.ndim != 3 or U.shape[1:] != m.shape:
        raise InputError(f"proposal map {m.shape} does not match feature maps {U.shape}")
    return U * m[None, :, :]


def sp_backward(dV, M) -> np.ndarray:
    """Gradient of the coupling with ``M`` held constant."""
    dV = np.asarray(dV, dtype=np.float64)
    m = _map_array(M)
    if dV.ndim != 3 or dV.shape[1:] != m.shape:
        raise InputError(f"proposal map {m.shape} does not match gradient {dV.shape}")
    return dV * m[None, :, :]
