"""Model parameters and the annealed-EM trainer.

The model co-clusters users and items across Z domains.  One set of K user
clusters is shared by every domain; items belong both to T common clusters
(shared across domains) and to L_z domain-specific clusters.  Ratings are
discrete levels 1..R drawn from categorical tables indexed by cluster
pairs.  Training alternates posterior computation (E) and closed-form
parameter updates (M) on the pooled data, with an inverse temperature
raised toward 1 to dodge poor local maxima.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .data import CrossDomainDataset

PROB_ATOL = 1e-12  # every stored distribution must sum to 1 within this


class ModelError(ValueError):
    """Inconsistent model dimensions or configuration."""


@dataclass(frozen=True)
class ModelDims:
    """Cluster counts and index-space sizes for one model instance."""

    n_domains: int
    n_user_clusters: int
    n_common_clusters: int
    n_specific_clusters: tuple[int, ...]
    n_levels: int
    n_users: tuple[int, ...]
    n_items: tuple[int, ...]

    def __post_init__(self):
        if self.n_user_clusters < 1 or self.n_common_clusters < 1:
            raise ModelError("cluster counts must be >= 1")
        if any(l < 0 for l in self.n_specific_clusters):
            raise ModelError("specific cluster counts must be >= 0")
        if self.n_levels < 2:
            raise ModelError("need at least 2 rating levels")
        for name, seq in (
            ("n_specific_clusters", self.n_specific_clusters),
            ("n_users", self.n_users),
            ("n_items", self.n_items),
        ):
            if len(seq) != self.n_domains:
                raise ModelError(f"{name} must have one entry per domain")

    @property
    def total_users(self) -> int:
        return sum(self.n_users)

    @property
    def total_items(self) -> int:
        return sum(self.n_items)

    def user_offset(self, domain: int) -> int:
        return sum(self.n_users[:domain])

    def item_offset(self, domain: int) -> int:
        return sum(self.n_items[:domain])

    @classmethod
    def from_dataset(
        cls,
        dataset: CrossDomainDataset,
        n_user_clusters: int,
        n_common_clusters: int,
        n_specific_clusters,
    ) -> "ModelDims":
        if isinstance(n_specific_clusters, int):
            n_specific_clusters = (n_specific_clusters,) * dataset.n_domains
        return cls(
            n_domains=dataset.n_domains,
            n_user_clusters=n_user_clusters,
            n_common_clusters=n_common_clusters,
            n_specific_clusters=tuple(n_specific_clusters),
            n_levels=dataset.n_levels,
            n_users=tuple(dataset.n_users),
            n_items=tuple(dataset.n_items),
        )


@dataclass
class PclfParams:
    """Full parameter set.

    prior_u       (K,)            user-cluster prior
    prior_vcom    (T,)            common item-cluster prior
    prior_vspe[z] (L_z,)          specific item-cluster prior per domain
    cond_u        (K, sum M_z)    P(user | user cluster), over all users pooled
    cond_vcom     (T, sum N_z)    P(item | common cluster), over all items pooled
    cond_vspe[z]  (L_z, N_z)      P(item | specific cluster), domain-local
    rate_com      (K, T, R)       categorical rating table per (k, t)
    rate_spe[z]   (K, L_z, R)     categorical rating table per (k, l)
    """

    dims: ModelDims
    prior_u: np.ndarray
    prior_vcom: np.ndarray
    prior_vspe: list[np.ndarray]
    cond_u: np.ndarray
    cond_vcom: np.ndarray
    cond_vspe: list[np.ndarray]
    rate_com: np.ndarray
    rate_spe: list[np.ndarray]

    def validate(self, atol: float = PROB_ATOL) -> None:
        """Check non-negativity and unit sums on every stored distribution."""
        d = self.dims
        checks = [
            ("prior_u", self.prior_u, (d.n_user_clusters,), None),
            ("prior_vcom", self.prior_vcom, (d.n_common_clusters,), None),
            ("cond_u", self.cond_u, (d.n_user_clusters, d.total_users), 1),
            ("cond_vcom", self.cond_vcom, (d.n_common_clusters, d.total_items), 1),
            ("rate_com", self.rate_com,
             (d.n_user_clusters, d.n_common_clusters, d.n_levels), 2),
        ]
        for z in range(d.n_domains):
            l_z = d.n_specific_clusters[z]
            checks.append((f"prior_vspe[{z}]", self.prior_vspe[z], (l_z,), None))
            checks.append((f"cond_vspe[{z}]", self.cond_vspe[z], (l_z, d.n_items[z]), 1))
            checks.append((f"rate_spe[{z}]", self.rate_spe[z],
                           (d.n_user_clusters, l_z, d.n_levels), 2))
        for name, arr, shape, axis in checks:
            if arr.shape != shape:
                raise ModelError(f"{name}: shape {arr.shape}, expected {shape}")
            if arr.size == 0:
                continue
            if (arr < 0).any():
                raise ModelError(f"{name}: negative entries")
            sums = arr.sum() if axis is None else arr.sum(axis=axis)
            if not np.allclose(sums, 1.0, rtol=0.0, atol=atol):
                worst = np.max(np.abs(np.asarray(sums) - 1.0))
                raise ModelError(f"{name}: distribution off by {worst:.3e}")

    def copy(self) -> "PclfParams":
        return PclfParams(
            dims=self.dims,
            prior_u=self.prior_u.copy(),
            prior_vcom=self.prior_vcom.copy(),
            prior_vspe=[a.copy() for a in self.prior_vspe],
            cond_u=self.cond_u.copy(),
            cond_vcom=self.cond_vcom.copy(),
            cond_vspe=[a.copy() for a in self.cond_vspe],
            rate_com=self.rate_com.copy(),
            rate_spe=[a.copy() for a in self.rate_spe],
        )


@dataclass
class Responsibilities:
    """Per-triple posteriors: p0 over (k, t) on pooled data, pz over (k, l) per domain."""

    p0: np.ndarray
    pz: list[np.ndarray]


@dataclass(frozen=True)
class TrainConfig:
    beta_schedule: tuple[float, ...] = (0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
    max_iters_per_beta: int = 50
    min_iters_per_beta: int = 10
    rel_ll_tol: float = 1e-6
    smoothing_floor: float = 1e-10
    seed: int = 0

    def __post_init__(self):
        sched = tuple(self.beta_schedule)
        if not sched or any(not 0.0 < b <= 1.0 for b in sched):
            raise ModelError("beta schedule values must lie in (0, 1]")
        if list(sched) != sorted(sched):
            raise ModelError("beta schedule must be ascending")
        if sched[-1] != 1.0:
            raise ModelError("beta schedule must end at 1.0")
        if self.rel_ll_tol <= 0:
            raise ModelError("rel_ll_tol must be > 0")
        if self.smoothing_floor < 0:
            raise ModelError("smoothing_floor must be >= 0")
        if self.min_iters_per_beta < 1:
            raise ModelError("min_iters_per_beta must be >= 1")
        object.__setattr__(self, "beta_schedule", sched)


@dataclass(frozen=True)
class TraceEntry:
    beta: float
    iteration: int
    log_likelihood: float


def _check_dims(dims: ModelDims, dataset: CrossDomainDataset) -> None:
    if (
        dims.n_domains != dataset.n_domains
        or dims.n_levels != dataset.n_levels
        or tuple(dims.n_users) != tuple(dataset.n_users)
        or tuple(dims.n_items) != tuple(dataset.n_items)
    ):
        raise ModelError("model dims do not match the dataset")


def _normalize(arr: np.ndarray, axis=None) -> np.ndarray:
    """Scale to unit sum along ``axis``; an all-zero slice becomes uniform."""
    if arr.size == 0:
        return arr
    total = arr.sum(axis=axis, keepdims=True)
    width = arr.size // total.size
    safe = np.where(total > 0.0, total, 1.0)
    out = arr / safe
    if (total == 0.0).any():
        out = np.where(total > 0.0, out, 1.0 / width)
    return out


def _apply_floor(arr: np.ndarray, floor: float, axis) -> np.ndarray:
    if floor == 0.0 or arr.size == 0:
        return arr
    return _normalize(arr + floor, axis=axis)


def _log(arr: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(arr)


def _gathered_log_weights(prior, cond, idx):
    """Per-triple log(prior[c] * cond[c, idx_j]) as an (S, C) array."""
    full = _log(prior)[:, None] + _log(cond)
    return np.ascontiguousarray(full[:, idx].T)


def init_params(
    dims: ModelDims,
    dataset: CrossDomainDataset,
    seed: int,
    floor: float = 1e-10,
) -> PclfParams:
    """Seeded random start: draw positive responsibilities per triple,
    normalize them, and run one M step.

    Draws are gamma(0.5) rather than uniform: averaging near-uniform
    responsibilities over many triples yields almost-symmetric parameters
    from which EM barely moves, while heavier-tailed draws give each
    triple a preferred cluster pair and break the symmetry immediately.
    """
    _check_dims(dims, dataset)
    rng = np.random.default_rng(seed)
    s_total = sum(dataset.n_ratings)
    k, t = dims.n_user_clusters, dims.n_common_clusters
    p0 = rng.gamma(0.5, size=(s_total, k, t))
    p0 /= p0.sum(axis=(1, 2), keepdims=True)
    pz = []
    for z in range(dims.n_domains):
        l_z = dims.n_specific_clusters[z]
        s_z = dataset.n_ratings[z]
        if l_z == 0:
            pz.append(np.zeros((s_z, k, 0)))
            continue
        block = rng.gamma(0.5, size=(s_z, k, l_z))
        block /= block.sum(axis=(1, 2), keepdims=True)
        pz.append(block)
    return m_step(Responsibilities(p0=p0, pz=pz), dataset, floor=floor)


def e_step(params: PclfParams, dataset: CrossDomainDataset, beta: float = 1.0) -> Responsibilities:
    """Joint posteriors over cluster pairs for every triple.

    The common posterior is computed over the pooled data, each specific
    posterior over its own domain only.  ``beta`` tempers the posterior:
    1 is the exact E step, smaller values flatten it (annealing).
    """
    if not 0.0 < beta <= 1.0:
        raise ModelError(f"beta must lie in (0, 1], got {beta}")
    _check_dims(params.dims, dataset)
    dims = params.dims
    gu, gv, r = dataset.pooled()
    ridx = (r - 1).astype(np.int64)

    log_wu_all = _log(params.prior_u)[:, None] + _log(params.cond_u)  # (K, U)
    log_wu = np.ascontiguousarray(log_wu_all[:, gu].T)
    log_wv = _gathered_log_weights(params.prior_vcom, params.cond_vcom, gv)
    p0 = kernels.pair_responsibilities(log_wu, log_wv, _log(params.rate_com), ridx, beta)

    pz = []
    for z in range(dims.n_domains):
        l_z = dims.n_specific_clusters[z]
        s_z = dataset.n_ratings[z]
        if l_z == 0:
            pz.append(np.zeros((s_z, dims.n_user_clusters, 0)))
            continue
        gu_z = dataset.users[z] + dims.user_offset(z)
        ridx_z = (dataset.ratings[z] - 1).astype(np.int64)
        log_wu_z = np.ascontiguousarray(log_wu_all[:, gu_z].T)
        log_wv_z = _gathered_log_weights(
            params.prior_vspe[z], params.cond_vspe[z], dataset.items[z]
        )
        pz.append(
            kernels.pair_responsibilities(
                log_wu_z, log_wv_z, _log(params.rate_spe[z]), ridx_z, beta
            )
        )
    return Responsibilities(p0=p0, pz=pz)


def m_step(resp: Responsibilities, dataset: CrossDomainDataset, floor: float) -> PclfParams:
    """Closed-form parameter updates from responsibility masses.

    Every distribution is the normalized sufficient statistic of its
    responsibilities (user-side statistics pool the common and all
    specific tensors).  After normalizing, ``floor`` is added to every
    entry and the distribution renormalized, which keeps later E steps
    and likelihoods finite.
    """
    s_total = sum(dataset.n_ratings)
    if resp.p0.shape[0] != s_total or len(resp.pz) != dataset.n_domains:
        raise ModelError("responsibility shapes do not match the dataset")
    k, t = resp.p0.shape[1], resp.p0.shape[2]
    dims = ModelDims(
        n_domains=dataset.n_domains,
        n_user_clusters=k,
        n_common_clusters=t,
        n_specific_clusters=tuple(b.shape[2] for b in resp.pz),
        n_levels=dataset.n_levels,
        n_users=tuple(dataset.n_users),
        n_items=tuple(dataset.n_items),
    )
    gu, gv, r = dataset.pooled()
    ridx = (r - 1).astype(np.int64)
    u_total, v_total = dims.total_users, dims.total_items

    cl_u, cl_v, by_user, by_item, by_level = kernels.pair_stats(
        resp.p0, gu, gv, ridx, u_total, v_total, dims.n_levels
    )
    prior_u_num = cl_u.copy()
    cond_u_num = by_user.copy()
    prior_vcom = _normalize(cl_v)
    cond_vcom = _normalize(by_item, axis=1)
    rate_com = _normalize(by_level, axis=2)

    prior_vspe, cond_vspe, rate_spe = [], [], []
    for z in range(dims.n_domains):
        block = resp.pz[z]
        if block.shape[2] == 0:
            prior_vspe.append(np.zeros(0))
            cond_vspe.append(np.zeros((0, dims.n_items[z])))
            rate_spe.append(np.zeros((k, 0, dims.n_levels)))
            continue
        gu_z = dataset.users[z] + dims.user_offset(z)
        ridx_z = (dataset.ratings[z] - 1).astype(np.int64)
        cl_uz, cl_vz, by_user_z, by_item_z, by_level_z = kernels.pair_stats(
            block, gu_z, dataset.items[z], ridx_z,
            u_total, dims.n_items[z], dims.n_levels,
        )
        prior_u_num += cl_uz
        cond_u_num += by_user_z
        prior_vspe.append(_normalize(cl_vz))
        cond_vspe.append(_normalize(by_item_z, axis=1))
        rate_spe.append(_normalize(by_level_z, axis=2))

    params = PclfParams(
        dims=dims,
        prior_u=_apply_floor(_normalize(prior_u_num), floor, axis=None),
        prior_vcom=_apply_floor(prior_vcom, floor, axis=None),
        prior_vspe=[_apply_floor(a, floor, axis=None) for a in prior_vspe],
        cond_u=_apply_floor(_normalize(cond_u_num, axis=1), floor, axis=1),
        cond_vcom=_apply_floor(cond_vcom, floor, axis=1),
        cond_vspe=[_apply_floor(a, floor, axis=1) for a in cond_vspe],
        rate_com=_apply_floor(rate_com, floor, axis=2),
        rate_spe=[_apply_floor(a, floor, axis=2) for a in rate_spe],
    )
    return params


def log_likelihood(params: PclfParams, dataset: CrossDomainDataset) -> float:
    """Sum of the common-component and specific-component data log-likelihoods.

    Returns -inf if any triple carries zero mass (unreachable once the
    M-step floor is positive).
    """
    _check_dims(params.dims, dataset)
    dims = params.dims
    gu, gv, r = dataset.pooled()
    ridx = (r - 1).astype(np.int64)

    log_wu_all = _log(params.prior_u)[:, None] + _log(params.cond_u)
    log_wu = np.ascontiguousarray(log_wu_all[:, gu].T)
    log_wv = _gathered_log_weights(params.prior_vcom, params.cond_vcom, gv)
    total = kernels.pair_log_likelihood(log_wu, log_wv, _log(params.rate_com), ridx)

    for z in range(dims.n_domains):
        if dims.n_specific_clusters[z] == 0:
            continue
        gu_z = dataset.users[z] + dims.user_offset(z)
        ridx_z = (dataset.ratings[z] - 1).astype(np.int64)
        log_wu_z = np.ascontiguousarray(log_wu_all[:, gu_z].T)
        log_wv_z = _gathered_log_weights(
            params.prior_vspe[z], params.cond_vspe[z], dataset.items[z]
        )
        total += kernels.pair_log_likelihood(
            log_wu_z, log_wv_z, _log(params.rate_spe[z]), ridx_z
        )
    return total


def train(
    dataset: CrossDomainDataset,
    dims: ModelDims,
    config: TrainConfig = TrainConfig(),
) -> tuple[PclfParams, list[TraceEntry]]:
    """Annealed EM: for each beta in the schedule, alternate E and M steps
    until the relative log-likelihood change drops below tolerance.

    The tolerance is not consulted during the first ``min_iters_per_beta``
    iterations: runs started from near-symmetric random parameters move
    through a flat stretch before the clusters differentiate, and stopping
    there would freeze the saddle point.  A schedule of (1.0,) is plain
    EM.  Returns the final parameters and a per-iteration (beta,
    iteration, log-likelihood) trace.
    """
    _check_dims(dims, dataset)
    params = init_params(dims, dataset, config.seed, floor=config.smoothing_floor)
    trace: list[TraceEntry] = []
    for beta in config.beta_schedule:
        prev = None
        for it in range(config.max_iters_per_beta):
            resp = e_step(params, dataset, beta=beta)
            params = m_step(resp, dataset, floor=config.smoothing_floor)
            ll = log_likelihood(params, dataset)
            trace.append(TraceEntry(beta=beta, iteration=it, log_likelihood=ll))
            if (
                prev is not None
                and it + 1 >= config.min_iters_per_beta
                and abs(ll - prev) <= config.rel_ll_tol * abs(prev)
            ):
                break
            prev = ll
    return params, trace
