"""Rating prediction from trained parameters.

Predictions combine two bilinear forms: user memberships times a
cluster-level expected-rating matrix times item memberships, once through
the common item clusters (transferable across domains) and once through
the domain-specific ones, mixed by per-domain weights W1 + W2 = 1.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .em import ModelDims, ModelError, PclfParams, _normalize

DEFAULT_W1 = 0.35


@dataclass
class ClusterRatingMatrices:
    """Expected rating per cluster pair: s_com is K x T, s_spe[z] is K x L_z."""

    s_com: np.ndarray
    s_spe: list[np.ndarray]


@dataclass
class MembershipVectors:
    """Posterior cluster memberships per entity, rows summing to 1.

    Entities whose joint mass is zero get a uniform row and are flagged in
    the corresponding boolean mask.
    """

    p_u: np.ndarray                 # (total users, K)
    p_vcom: np.ndarray              # (total items, T)
    p_vspe: list[np.ndarray]        # per domain (N_z, L_z)
    uniform_u: np.ndarray
    uniform_vcom: np.ndarray
    uniform_vspe: list[np.ndarray]


@dataclass(frozen=True)
class PredictionWeights:
    """Per-domain mix between the cross-domain and the specific rating
    functions; the specific weight is always 1 - w1."""

    w1: tuple[float, ...]

    def __post_init__(self):
        if any(not 0.0 <= w <= 1.0 for w in self.w1):
            raise ModelError(f"w1 weights must lie in [0, 1], got {self.w1}")
        object.__setattr__(self, "w1", tuple(float(w) for w in self.w1))

    def w2(self, domain: int) -> float:
        return 1.0 - self.w1[domain]

    @classmethod
    def uniform(cls, n_domains: int, w1: float = DEFAULT_W1) -> "PredictionWeights":
        return cls(w1=(w1,) * n_domains)

    @classmethod
    def common_only(cls, n_domains: int) -> "PredictionWeights":
        return cls(w1=(1.0,) * n_domains)


def cluster_rating_matrices(params: PclfParams) -> ClusterRatingMatrices:
    """Expectation of each categorical rating table over the levels 1..R."""
    levels = np.arange(1, params.dims.n_levels + 1, dtype=float)
    return ClusterRatingMatrices(
        s_com=params.rate_com @ levels,
        s_spe=[table @ levels for table in params.rate_spe],
    )


def _bayes_memberships(prior: np.ndarray, cond: np.ndarray):
    """Invert P(entity | cluster) into per-entity cluster posteriors."""
    joint = (cond * prior[:, None]).T  # (entities, clusters)
    mass = joint.sum(axis=1)
    flagged = mass == 0.0
    return _normalize(joint, axis=1), flagged


def memberships(params: PclfParams) -> MembershipVectors:
    p_u, flag_u = _bayes_memberships(params.prior_u, params.cond_u)
    p_vcom, flag_vcom = _bayes_memberships(params.prior_vcom, params.cond_vcom)
    p_vspe, flag_vspe = [], []
    for z in range(params.dims.n_domains):
        if params.dims.n_specific_clusters[z] == 0:
            p_vspe.append(np.zeros((params.dims.n_items[z], 0)))
            flag_vspe.append(np.zeros(params.dims.n_items[z], dtype=bool))
            continue
        vec, flag = _bayes_memberships(params.prior_vspe[z], params.cond_vspe[z])
        p_vspe.append(vec)
        flag_vspe.append(flag)
    return MembershipVectors(
        p_u=p_u,
        p_vcom=p_vcom,
        p_vspe=p_vspe,
        uniform_u=flag_u,
        uniform_vcom=flag_vcom,
        uniform_vspe=flag_vspe,
    )


def _user_vector(mems: MembershipVectors, dims: ModelDims, domain: int, user: int):
    if 0 <= user < dims.n_users[domain]:
        return mems.p_u[dims.user_offset(domain) + user]
    warnings.warn(
        f"user {user} unseen in domain {domain}; using uniform membership",
        stacklevel=3,
    )
    return np.full(dims.n_user_clusters, 1.0 / dims.n_user_clusters)


def _common_item_vector(mems: MembershipVectors, dims: ModelDims, domain: int, item: int):
    if 0 <= item < dims.n_items[domain]:
        return mems.p_vcom[dims.item_offset(domain) + item]
    warnings.warn(
        f"item {item} unseen in domain {domain}; using uniform membership",
        stacklevel=3,
    )
    return np.full(dims.n_common_clusters, 1.0 / dims.n_common_clusters)


def _specific_item_vector(mems: MembershipVectors, dims: ModelDims, domain: int, item: int):
    l_z = dims.n_specific_clusters[domain]
    if 0 <= item < dims.n_items[domain]:
        return mems.p_vspe[domain][item]
    return np.full(l_z, 1.0 / l_z)


def predict(
    params: PclfParams,
    mats: ClusterRatingMatrices,
    mems: MembershipVectors,
    weights: PredictionWeights,
    domain: int,
    user: int,
    item: int,
) -> float:
    """Predicted rating for one in-domain cell, always within [1, R].

    Unseen users or items fall back to uniform memberships (with a
    warning), which yields the cluster-prior-weighted mean.
    """
    dims = params.dims
    w1 = weights.w1[domain]
    pu = _user_vector(mems, dims, domain, user)
    common = float(pu @ mats.s_com @ _common_item_vector(mems, dims, domain, item))
    if dims.n_specific_clusters[domain] == 0:
        if w1 != 1.0:
            raise ModelError(
                f"domain {domain} has no specific clusters; predictions require w1 = 1"
            )
        return common
    if w1 == 1.0:
        return common
    specific = float(
        pu @ mats.s_spe[domain] @ _specific_item_vector(mems, dims, domain, item)
    )
    return w1 * common + (1.0 - w1) * specific


def predict_many(
    params: PclfParams,
    mats: ClusterRatingMatrices,
    mems: MembershipVectors,
    weights: PredictionWeights,
    domain: int,
    users: np.ndarray,
    items: np.ndarray,
) -> np.ndarray:
    """Vectorized ``predict`` over parallel index arrays of one domain."""
    dims = params.dims
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    if users.size and (users.min() < 0 or users.max() >= dims.n_users[domain]):
        raise ModelError("user index out of range; use predict() for fallbacks")
    if items.size and (items.min() < 0 or items.max() >= dims.n_items[domain]):
        raise ModelError("item index out of range; use predict() for fallbacks")
    pu = mems.p_u[dims.user_offset(domain) + users]
    pvc = mems.p_vcom[dims.item_offset(domain) + items]
    common = np.einsum("nk,kt,nt->n", pu, mats.s_com, pvc)
    w1 = weights.w1[domain]
    if dims.n_specific_clusters[domain] == 0:
        if w1 != 1.0:
            raise ModelError(
                f"domain {domain} has no specific clusters; predictions require w1 = 1"
            )
        return common
    if w1 == 1.0:
        return common
    pvs = mems.p_vspe[domain][items]
    specific = np.einsum("nk,kl,nl->n", pu, mats.s_spe[domain], pvs)
    return w1 * common + (1.0 - w1) * specific


def predict_cross(
    params: PclfParams,
    mats: ClusterRatingMatrices,
    mems: MembershipVectors,
    user: tuple[int, int],
    item: tuple[int, int],
    weights: PredictionWeights | None = None,
    mix_specific: bool = False,
) -> float:
    """Predict a foreign-domain cell: user from domain a, item from domain b.

    By default only the common rating pattern carries across domains.
    ``mix_specific=True`` additionally blends the item domain's specific
    pattern using that domain's weights (the shared user clusters make the
    bilinear form well defined either way).
    """
    (dom_u, u), (dom_v, v) = user, item
    dims = params.dims
    if dom_u == dom_v:
        raise ModelError("predict_cross requires distinct user and item domains")
    for d in (dom_u, dom_v):
        if not 0 <= d < dims.n_domains:
            raise ModelError(f"domain {d} out of range")
    pu = _user_vector(mems, dims, dom_u, u)
    common = float(pu @ mats.s_com @ _common_item_vector(mems, dims, dom_v, v))
    if not mix_specific:
        return common
    if dims.n_specific_clusters[dom_v] == 0:
        return common
    if weights is None:
        raise ModelError("mix_specific=True needs the item domain's weights")
    w1 = weights.w1[dom_v]
    specific = float(
        pu @ mats.s_spe[dom_v] @ _specific_item_vector(mems, dims, dom_v, v)
    )
    return w1 * common + (1.0 - w1) * specific


def complete_matrix(
    params: PclfParams,
    mats: ClusterRatingMatrices,
    mems: MembershipVectors,
    weights: PredictionWeights,
    domain: int,
    sink,
) -> None:
    """Stream predictions for every (user, item) cell of one domain.

    ``sink(user_index, row)`` is called once per user in index order with
    the full row of item predictions; the dense matrix itself is never
    materialized.
    """
    dims = params.dims
    n_items = dims.n_items[domain]
    pvc = mems.p_vcom[dims.item_offset(domain): dims.item_offset(domain) + n_items]
    w1 = weights.w1[domain]
    has_specific = dims.n_specific_clusters[domain] > 0
    if not has_specific and w1 != 1.0:
        raise ModelError(
            f"domain {domain} has no specific clusters; predictions require w1 = 1"
        )
    for u in range(dims.n_users[domain]):
        pu = mems.p_u[dims.user_offset(domain) + u]
        row = (pu @ mats.s_com) @ pvc.T
        if has_specific and w1 != 1.0:
            specific = (pu @ mats.s_spe[domain]) @ mems.p_vspe[domain].T
            row = w1 * row + (1.0 - w1) * specific
        sink(u, row)
