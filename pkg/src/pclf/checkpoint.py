"""Self-describing model checkpoints.

One JSON file per model: a versioned header, the model kind, dims, every
parameter array with its declared shape in row-major order, the training
trace and the seed.  Serialization is canonical (sorted keys, fixed
separators), so identical models produce byte-identical files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .baselines import NmfFactors
from .em import ModelDims, PclfParams, TraceEntry

FORMAT_VERSION = "pclf-model-v1"
MODEL_KINDS = ("pclf", "fmm", "rmgm-like", "nmf")


class CheckpointError(ValueError):
    """Unreadable, corrupt, or wrong-version checkpoint file."""


@dataclass
class Checkpoint:
    model_kind: str
    seed: int
    trace: list[TraceEntry]
    params: PclfParams | None = None      # cluster models
    factors: NmfFactors | None = None     # nmf
    n_levels: int | None = None           # nmf: rating-scale size
    default_w1: list[float] | None = None


def _array(arr: np.ndarray) -> dict:
    return {"shape": list(arr.shape), "data": np.asarray(arr, dtype=float).ravel().tolist()}


def _unarray(obj: dict) -> np.ndarray:
    return np.array(obj["data"], dtype=float).reshape(obj["shape"])


def _dims_dict(dims: ModelDims) -> dict:
    return {
        "n_domains": dims.n_domains,
        "n_user_clusters": dims.n_user_clusters,
        "n_common_clusters": dims.n_common_clusters,
        "n_specific_clusters": list(dims.n_specific_clusters),
        "n_levels": dims.n_levels,
        "n_users": list(dims.n_users),
        "n_items": list(dims.n_items),
    }


def _dims_from_dict(obj: dict) -> ModelDims:
    return ModelDims(
        n_domains=obj["n_domains"],
        n_user_clusters=obj["n_user_clusters"],
        n_common_clusters=obj["n_common_clusters"],
        n_specific_clusters=tuple(obj["n_specific_clusters"]),
        n_levels=obj["n_levels"],
        n_users=tuple(obj["n_users"]),
        n_items=tuple(obj["n_items"]),
    )


def save_checkpoint(path: str, ckpt: Checkpoint) -> None:
    if ckpt.model_kind not in MODEL_KINDS:
        raise CheckpointError(
            f"model_kind {ckpt.model_kind!r} not in {list(MODEL_KINDS)}"
        )
    doc = {
        "format": FORMAT_VERSION,
        "model_kind": ckpt.model_kind,
        "seed": ckpt.seed,
        "trace": [[t.beta, t.iteration, t.log_likelihood] for t in ckpt.trace],
    }
    if ckpt.default_w1 is not None:
        doc["default_w1"] = [float(w) for w in ckpt.default_w1]
    if ckpt.model_kind == "nmf":
        if ckpt.factors is None or ckpt.n_levels is None:
            raise CheckpointError("nmf checkpoints need factors and n_levels")
        doc["rank"] = ckpt.factors.rank
        doc["n_levels"] = ckpt.n_levels
        doc["arrays"] = {
            "u_factors": _array(ckpt.factors.u_factors),
            "v_factors": _array(ckpt.factors.v_factors),
        }
        doc["objective"] = list(ckpt.factors.objective)
    else:
        if ckpt.params is None:
            raise CheckpointError(f"{ckpt.model_kind} checkpoints need params")
        p = ckpt.params
        doc["dims"] = _dims_dict(p.dims)
        doc["arrays"] = {
            "prior_u": _array(p.prior_u),
            "prior_vcom": _array(p.prior_vcom),
            "cond_u": _array(p.cond_u),
            "cond_vcom": _array(p.cond_vcom),
            "rate_com": _array(p.rate_com),
        }
        for z in range(p.dims.n_domains):
            doc["arrays"][f"prior_vspe_{z}"] = _array(p.prior_vspe[z])
            doc["arrays"][f"cond_vspe_{z}"] = _array(p.cond_vspe[z])
            doc["arrays"][f"rate_spe_{z}"] = _array(p.rate_spe[z])
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_checkpoint(path: str) -> Checkpoint:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint {path} is not valid JSON: {exc}") from exc
    found = doc.get("format")
    if found != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint version mismatch: expected {FORMAT_VERSION!r}, found {found!r}"
        )
    kind = doc.get("model_kind")
    if kind not in MODEL_KINDS:
        raise CheckpointError(f"unknown model_kind {kind!r}")
    trace = [TraceEntry(beta=b, iteration=int(i), log_likelihood=ll)
             for b, i, ll in doc.get("trace", [])]
    default_w1 = doc.get("default_w1")
    if kind == "nmf":
        factors = NmfFactors(
            u_factors=_unarray(doc["arrays"]["u_factors"]),
            v_factors=_unarray(doc["arrays"]["v_factors"]),
            rank=int(doc["rank"]),
            objective=list(doc.get("objective", [])),
        )
        return Checkpoint(
            model_kind=kind, seed=int(doc["seed"]), trace=trace,
            factors=factors, n_levels=int(doc["n_levels"]), default_w1=default_w1,
        )
    dims = _dims_from_dict(doc["dims"])
    arrays = doc["arrays"]
    params = PclfParams(
        dims=dims,
        prior_u=_unarray(arrays["prior_u"]),
        prior_vcom=_unarray(arrays["prior_vcom"]),
        prior_vspe=[_unarray(arrays[f"prior_vspe_{z}"]) for z in range(dims.n_domains)],
        cond_u=_unarray(arrays["cond_u"]),
        cond_vcom=_unarray(arrays["cond_vcom"]),
        cond_vspe=[_unarray(arrays[f"cond_vspe_{z}"]) for z in range(dims.n_domains)],
        rate_com=_unarray(arrays["rate_com"]),
        rate_spe=[_unarray(arrays[f"rate_spe_{z}"]) for z in range(dims.n_domains)],
    )
    return Checkpoint(
        model_kind=kind, seed=int(doc["seed"]), trace=trace,
        params=params, default_w1=default_w1,
    )
