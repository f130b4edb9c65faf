"""Comparison models: single-domain co-clustering (FMM), the common-only
pooled configuration (RMGM-like), and masked non-negative matrix
factorization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import CrossDomainDataset, DataError
from .em import ModelDims, ModelError, PclfParams, TraceEntry, TrainConfig, train


def fmm_train(
    dataset: CrossDomainDataset,
    n_user_clusters: int,
    n_item_clusters: int,
    config: TrainConfig = TrainConfig(),
) -> tuple[PclfParams, list[TraceEntry]]:
    """Single-domain mixture model: the shared trainer on Z=1 with the
    specific component disabled.  Predict with w1 = 1."""
    if dataset.n_domains != 1:
        raise ModelError(
            f"fmm_train needs a single-domain dataset, got {dataset.n_domains} domains"
        )
    dims = ModelDims.from_dataset(dataset, n_user_clusters, n_item_clusters, (0,))
    return train(dataset, dims, config)


def common_only_train(
    dataset: CrossDomainDataset,
    n_user_clusters: int,
    n_item_clusters: int,
    config: TrainConfig = TrainConfig(),
) -> tuple[PclfParams, list[TraceEntry]]:
    """RMGM-like baseline: transfer only the common rating pattern.

    All specific components are disabled, so every domain shares the one
    pooled co-clustering.  Predict with w1 = 1.
    """
    if dataset.n_domains < 2:
        raise ModelError("common_only_train needs at least 2 domains")
    dims = ModelDims.from_dataset(
        dataset, n_user_clusters, n_item_clusters, (0,) * dataset.n_domains
    )
    return train(dataset, dims, config)


@dataclass
class NmfFactors:
    """Non-negative factor pair, plus the per-iteration masked objective."""

    u_factors: np.ndarray  # (M, rank)
    v_factors: np.ndarray  # (N, rank)
    rank: int
    objective: list[float] = field(default_factory=list)


def domain_matrix(dataset: CrossDomainDataset, domain: int) -> np.ndarray:
    """Dense M x N rating matrix of one domain with NaN marking missing cells."""
    dataset._check_domain(domain)
    out = np.full((dataset.n_users[domain], dataset.n_items[domain]), np.nan)
    out[dataset.users[domain], dataset.items[domain]] = dataset.ratings[domain]
    return out


def nmf_train(
    observed: np.ndarray,
    rank: int = 20,
    iters: int = 200,
    seed: int = 0,
    masked: bool = True,
) -> NmfFactors:
    """Multiplicative-update NMF on the observed cells of a rating matrix.

    ``observed`` is dense with NaN for missing entries.  With
    ``masked=True`` (default) the squared error is taken over observed
    cells only; ``masked=False`` treats missing cells as zeros instead.
    The recorded objective is non-increasing across iterations.
    """
    if rank < 1:
        raise DataError(f"rank must be >= 1, got {rank}")
    observed = np.asarray(observed, dtype=float)
    present = ~np.isnan(observed)
    if not present.any():
        raise DataError("matrix has no observed entries")
    mask = present if masked else np.ones_like(present)
    values = np.where(present, observed, 0.0)
    m, n = observed.shape
    rng = np.random.default_rng(seed)
    scale = np.sqrt(max(values[present].mean(), 1.0) / rank)
    u = rng.uniform(0.1, 1.0, size=(m, rank)) * scale
    v = rng.uniform(0.1, 1.0, size=(n, rank)) * scale

    w = mask.astype(float)
    target = w * values
    eps = 1e-12
    objective = []
    for _ in range(iters):
        u *= (target @ v) / ((w * (u @ v.T)) @ v + eps)
        v *= (target.T @ u) / ((w * (u @ v.T)).T @ u + eps)
        resid = w * (values - u @ v.T)
        objective.append(float((resid * resid).sum()))
    return NmfFactors(u_factors=u, v_factors=v, rank=rank, objective=objective)


def nmf_predict(factors: NmfFactors, user: int, item: int, n_levels: int) -> float:
    """Factor dot product clamped to the rating range [1, R]."""
    m, n = factors.u_factors.shape[0], factors.v_factors.shape[0]
    if not 0 <= user < m:
        raise DataError(f"user index {user} out of range [0, {m})")
    if not 0 <= item < n:
        raise DataError(f"item index {item} out of range [0, {n})")
    raw = float(factors.u_factors[user] @ factors.v_factors[item])
    return float(min(max(raw, 1.0), float(n_levels)))
