"""Evaluation: MAE, planted-cluster synthetic data, and the Given-N harness.

The synthetic generator samples ratings from a known model instance so
trained models can be scored against ground truth.  The experiment runner
repeats the split/train/score cycle over seeds and aggregates per
(model, domain, given-N) cell.
"""

from __future__ import annotations

import json
import statistics
from dataclasses import dataclass, field

import numpy as np

from . import baselines, inference
from .data import (
    CrossDomainDataset,
    DataError,
    RatingTriple,
    ScaleSpec,
    build_dataset,
    given_n_split,
    parse_ratings,
    select_subset,
)
from .em import ModelDims, PclfParams, TrainConfig, train

KNOWN_MODELS = ("pclf", "rmgm-like", "fmm", "nmf")


def mae(predictions, truths) -> float:
    """Mean absolute error between parallel prediction/truth sequences."""
    predictions = np.asarray(predictions, dtype=float)
    truths = np.asarray(truths, dtype=float)
    if predictions.shape != truths.shape:
        raise DataError(
            f"length mismatch: {predictions.shape} predictions vs {truths.shape} truths"
        )
    if predictions.size == 0:
        raise DataError("cannot compute MAE of empty sequences")
    return float(np.mean(np.abs(predictions - truths)))


@dataclass(frozen=True)
class SyntheticSpec:
    """Planted-cluster generator controls.

    If ``params`` is given it is used verbatim; otherwise memberships are
    sampled from a symmetric Dirichlet (small ``membership_concentration``
    means crisp clusters) and each cluster pair gets a rating table peaked
    around a random preferred level with decay ``rating_sharpness``.
    ``w1`` is the per-domain probability that a rating is produced by the
    common component rather than the domain-specific one.
    """

    dims: ModelDims
    w1: tuple[float, ...]
    density: float
    seed: int = 0
    membership_concentration: float = 0.15
    rating_sharpness: float = 2.0
    specific_sharpness: float | None = None  # defaults to rating_sharpness
    table_noise: float = 0.0  # uniform mass mixed into every rating table
    params: PclfParams | None = None

    def __post_init__(self):
        if not 0.0 < self.density <= 1.0:
            raise DataError(f"density must lie in (0, 1], got {self.density}")
        if len(self.w1) != self.dims.n_domains:
            raise DataError("w1 needs one weight per domain")
        if any(not 0.0 <= w <= 1.0 for w in self.w1):
            raise DataError("w1 weights must lie in [0, 1]")
        if not 0.0 <= self.table_noise < 1.0:
            raise DataError("table_noise must lie in [0, 1)")


def _peaked_tables(rng, n_rows, n_cols, n_levels, sharpness):
    """Categorical tables concentrated around a random level per cell."""
    peaks = rng.integers(1, n_levels + 1, size=(n_rows, n_cols))
    levels = np.arange(1, n_levels + 1)
    raw = np.exp(-sharpness * np.abs(levels[None, None, :] - peaks[:, :, None]))
    return raw / raw.sum(axis=2, keepdims=True)


def _params_from_memberships(dims, mem_u, mem_vcom, mem_vspe, rate_com, rate_spe):
    """Build the prior/conditional parameterization that induces the given
    memberships under uniform entity marginals."""
    def invert(mem):
        joint = mem / mem.shape[0]          # P(entity, cluster), entities uniform
        prior = joint.sum(axis=0)
        cond = (joint / prior[None, :]).T   # (clusters, entities)
        return prior, np.ascontiguousarray(cond)

    prior_u, cond_u = invert(mem_u)
    prior_vcom, cond_vcom = invert(mem_vcom)
    prior_vspe, cond_vspe = [], []
    for z in range(dims.n_domains):
        if dims.n_specific_clusters[z] == 0:
            prior_vspe.append(np.zeros(0))
            cond_vspe.append(np.zeros((0, dims.n_items[z])))
        else:
            p, c = invert(mem_vspe[z])
            prior_vspe.append(p)
            cond_vspe.append(c)
    return PclfParams(
        dims=dims,
        prior_u=prior_u,
        prior_vcom=prior_vcom,
        prior_vspe=prior_vspe,
        cond_u=cond_u,
        cond_vcom=cond_vcom,
        cond_vspe=cond_vspe,
        rate_com=rate_com,
        rate_spe=rate_spe,
    )


def synth_generate(spec: SyntheticSpec) -> tuple[CrossDomainDataset, PclfParams]:
    """Sample a dataset from a planted model and return both.

    Each observed cell picks the common component with probability w1,
    then latent clusters from the entity memberships, then a level from
    the matching rating table.  The returned parameters are the exact
    generating model, usable as an oracle.
    """
    dims = spec.dims
    rng = np.random.default_rng(spec.seed)
    if spec.params is not None:
        params = spec.params
    else:
        alpha = spec.membership_concentration
        mem_u = rng.dirichlet(np.full(dims.n_user_clusters, alpha), size=dims.total_users)
        mem_vcom = rng.dirichlet(
            np.full(dims.n_common_clusters, alpha), size=dims.total_items
        )
        mem_vspe = []
        for z in range(dims.n_domains):
            l_z = dims.n_specific_clusters[z]
            mem_vspe.append(
                rng.dirichlet(np.full(l_z, alpha), size=dims.n_items[z])
                if l_z
                else np.zeros((dims.n_items[z], 0))
            )
        def contaminate(table):
            eta = spec.table_noise
            return (1.0 - eta) * table + eta / dims.n_levels

        rate_com = contaminate(_peaked_tables(
            rng, dims.n_user_clusters, dims.n_common_clusters,
            dims.n_levels, spec.rating_sharpness,
        ))
        spe_sharp = (spec.specific_sharpness if spec.specific_sharpness is not None
                     else spec.rating_sharpness)
        rate_spe = [
            contaminate(_peaked_tables(
                rng, dims.n_user_clusters, dims.n_specific_clusters[z],
                dims.n_levels, spe_sharp,
            ))
            for z in range(dims.n_domains)
        ]
        params = _params_from_memberships(
            dims, mem_u, mem_vcom, mem_vspe, rate_com, rate_spe
        )
    params.validate()
    mems = inference.memberships(params)

    triples: list[RatingTriple] = []
    for z in range(dims.n_domains):
        m, n = dims.n_users[z], dims.n_items[z]
        n_cells = int(round(spec.density * m * n))
        if n_cells == 0:
            raise DataError(f"domain {z}: density {spec.density} yields no cells")
        flat = rng.choice(m * n, size=n_cells, replace=False)
        users, items = flat // n, flat % n
        use_common = rng.random(n_cells) < spec.w1[z]
        for u, v, com in zip(users, items, use_common):
            pu = mems.p_u[dims.user_offset(z) + u]
            k = rng.choice(dims.n_user_clusters, p=pu)
            if com or dims.n_specific_clusters[z] == 0:
                t = rng.choice(dims.n_common_clusters, p=mems.p_vcom[dims.item_offset(z) + v])
                table = params.rate_com[k, t]
            else:
                l = rng.choice(dims.n_specific_clusters[z], p=mems.p_vspe[z][v])
                table = params.rate_spe[z][k, l]
            level = int(rng.choice(dims.n_levels, p=table)) + 1
            triples.append(RatingTriple(z, int(u), int(v), level))
    dataset = CrossDomainDataset.from_indexed(
        n_levels=dims.n_levels,
        triples=triples,
        n_users=list(dims.n_users),
        n_items=list(dims.n_items),
    )
    return dataset, params


@dataclass(frozen=True)
class DomainSource:
    """One domain's input file and its parsing/subsetting controls."""

    path: str
    scale: ScaleSpec
    name: str = ""
    delimiter: str = "\t"
    columns: tuple[int, int, int] = (0, 1, 2)
    skip_header: bool = False


@dataclass
class ExperimentConfig:
    """Everything the Given-N harness needs for one experiment."""

    given_n: list[int]
    n_train_users: int
    dims: dict                      # {"K": int, "T": int, "L": [int, ...]}
    models: list[str]
    domains: list[DomainSource] = field(default_factory=list)
    synthetic: SyntheticSpec | None = None
    subset: dict | None = None      # n_users/n_items/min_user_ratings/min_item_ratings
    weights: list[float] | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    nmf_rank: int = 20
    nmf_iters: int = 200
    n_repeats: int = 10
    base_seed: int = 0
    resample_subsets: bool = False

    def __post_init__(self):
        if self.n_repeats < 1:
            raise DataError("n_repeats must be >= 1")
        if any(n < 0 for n in self.given_n):
            raise DataError("given_n values must be >= 0")
        unknown = [m for m in self.models if m not in KNOWN_MODELS]
        if unknown:
            raise DataError(f"unknown models {unknown}; known: {list(KNOWN_MODELS)}")
        if (self.synthetic is None) == (not self.domains):
            raise DataError("config needs exactly one of 'domains' or 'synthetic'")


_CONFIG_KEYS = {
    "given_n", "n_train_users", "dims", "models", "domains", "synthetic",
    "subset", "weights", "train", "nmf_rank", "nmf_iters", "n_repeats",
    "base_seed", "resample_subsets",
}
_DOMAIN_KEYS = {"path", "scale", "name", "delimiter", "columns", "skip_header"}
_SYNTH_KEYS = {
    "Z", "K", "T", "L", "R", "M", "N", "w1", "density", "seed",
    "membership_concentration", "rating_sharpness", "specific_sharpness",
    "table_noise",
}
_TRAIN_KEYS = {
    "beta_schedule", "max_iters_per_beta", "min_iters_per_beta",
    "rel_ll_tol", "smoothing_floor", "seed",
}


def _reject_unknown(mapping: dict, allowed: set, where: str) -> None:
    for key in mapping:
        if key not in allowed:
            raise DataError(f"unknown key {key!r} in {where}")


def synthetic_spec_from_dict(raw: dict) -> SyntheticSpec:
    _reject_unknown(raw, _SYNTH_KEYS, "synthetic spec")
    z = int(raw["Z"])
    dims = ModelDims(
        n_domains=z,
        n_user_clusters=int(raw["K"]),
        n_common_clusters=int(raw["T"]),
        n_specific_clusters=tuple(int(x) for x in raw["L"]),
        n_levels=int(raw.get("R", 5)),
        n_users=tuple(int(x) for x in raw["M"]),
        n_items=tuple(int(x) for x in raw["N"]),
    )
    w1 = raw.get("w1", 0.5)
    if isinstance(w1, (int, float)):
        w1 = [w1] * z
    specific_sharpness = raw.get("specific_sharpness")
    return SyntheticSpec(
        dims=dims,
        w1=tuple(float(x) for x in w1),
        density=float(raw["density"]),
        seed=int(raw.get("seed", 0)),
        membership_concentration=float(raw.get("membership_concentration", 0.15)),
        rating_sharpness=float(raw.get("rating_sharpness", 2.0)),
        specific_sharpness=(
            float(specific_sharpness) if specific_sharpness is not None else None
        ),
        table_noise=float(raw.get("table_noise", 0.0)),
    )


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Parse a config mapping, rejecting unknown keys by name.

    Omitted keys fall back to the protocol defaults: Given-N settings
    (5, 10, 15), dims K=20 / T=10 / L=15 per domain, prediction weight
    0.35 and 10 repeats, so a config only needs its data source and the
    training-user count.
    """
    _reject_unknown(raw, _CONFIG_KEYS, "experiment config")
    domains = []
    for i, d in enumerate(raw.get("domains", [])):
        _reject_unknown(d, _DOMAIN_KEYS, f"domains[{i}]")
        smin, smax = d["scale"]["min"], d["scale"]["max"]
        levels = d["scale"].get("target_levels", 5)
        domains.append(DomainSource(
            path=d["path"],
            scale=ScaleSpec(smin, smax, levels),
            name=d.get("name", f"d{i}"),
            delimiter=d.get("delimiter", "\t"),
            columns=tuple(d.get("columns", (0, 1, 2))),
            skip_header=bool(d.get("skip_header", False)),
        ))
    synthetic = None
    if "synthetic" in raw and raw["synthetic"] is not None:
        synthetic = synthetic_spec_from_dict(raw["synthetic"])
    train_raw = raw.get("train", {})
    _reject_unknown(train_raw, _TRAIN_KEYS, "train config")
    defaults = TrainConfig()
    train_cfg = TrainConfig(
        beta_schedule=tuple(train_raw.get("beta_schedule", defaults.beta_schedule)),
        max_iters_per_beta=int(train_raw.get("max_iters_per_beta", defaults.max_iters_per_beta)),
        min_iters_per_beta=int(
            train_raw.get("min_iters_per_beta", defaults.min_iters_per_beta)
        ),
        rel_ll_tol=float(train_raw.get("rel_ll_tol", defaults.rel_ll_tol)),
        smoothing_floor=float(train_raw.get("smoothing_floor", defaults.smoothing_floor)),
        seed=int(train_raw.get("seed", 0)),
    )
    if "subset" in raw and raw["subset"] is not None:
        _reject_unknown(
            raw["subset"],
            {"n_users", "n_items", "min_user_ratings", "min_item_ratings"},
            "subset",
        )
    dims = raw.get("dims", {"K": 20, "T": 10, "L": 15})
    _reject_unknown(dims, {"K", "T", "L"}, "dims")
    for key in ("K", "T", "L"):
        if key not in dims:
            raise DataError(f"dims is missing key {key!r}")
    return ExperimentConfig(
        given_n=[int(n) for n in raw.get("given_n", (5, 10, 15))],
        n_train_users=int(raw["n_train_users"]),
        dims=dims,
        models=list(raw.get("models", KNOWN_MODELS)),
        domains=domains,
        synthetic=synthetic,
        subset=raw.get("subset"),
        weights=raw.get("weights"),
        train=train_cfg,
        nmf_rank=int(raw.get("nmf_rank", 20)),
        nmf_iters=int(raw.get("nmf_iters", 200)),
        n_repeats=int(raw.get("n_repeats", 10)),
        base_seed=int(raw.get("base_seed", 0)),
        resample_subsets=bool(raw.get("resample_subsets", False)),
    )


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read experiment config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"experiment config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(raw)


@dataclass(frozen=True)
class ResultRow:
    model: str
    domain: int
    given_n: int
    repeat: int
    mae: float


@dataclass
class ResultsReport:
    rows: list[ResultRow]
    domain_names: list[str]

    def cell(self, model: str, domain: int, given_n: int) -> list[float]:
        return [
            r.mae for r in self.rows
            if r.model == model and r.domain == domain and r.given_n == given_n
        ]

    def mean(self, model: str, domain: int, given_n: int) -> float:
        return statistics.fmean(self.cell(model, domain, given_n))

    def std(self, model: str, domain: int, given_n: int) -> float:
        values = self.cell(model, domain, given_n)
        return statistics.pstdev(values) if len(values) > 1 else 0.0

    @property
    def models(self) -> list[str]:
        seen = []
        for r in self.rows:
            if r.model not in seen:
                seen.append(r.model)
        return seen

    @property
    def domains(self) -> list[int]:
        return sorted({r.domain for r in self.rows})

    @property
    def given_values(self) -> list[int]:
        return sorted({r.given_n for r in self.rows})


def _base_dataset(config: ExperimentConfig, seed: int) -> CrossDomainDataset:
    if config.synthetic is not None:
        spec = config.synthetic
        if seed != spec.seed:
            spec = SyntheticSpec(
                dims=spec.dims, w1=spec.w1, density=spec.density, seed=seed,
                membership_concentration=spec.membership_concentration,
                rating_sharpness=spec.rating_sharpness,
                specific_sharpness=spec.specific_sharpness,
                table_noise=spec.table_noise, params=spec.params,
            )
        dataset, _ = synth_generate(spec)
        return dataset
    per_domain = []
    for src in config.domains:
        raw = parse_ratings(
            src.path, delimiter=src.delimiter, column_map=src.columns,
            scale=src.scale, skip_header=src.skip_header,
        )
        if config.subset:
            raw = select_subset(
                raw,
                n_users=config.subset["n_users"],
                n_items=config.subset["n_items"],
                min_user_ratings=config.subset.get("min_user_ratings", 0),
                min_item_ratings=config.subset.get("min_item_ratings", 0),
                seed=seed,
            )
        per_domain.append((raw, src.scale))
    return build_dataset(per_domain)


def _assert_no_leak(train_triples, eval_triples) -> None:
    train_keys = {(t.domain, t.user, t.item) for t in train_triples}
    for t in eval_triples:
        if (t.domain, t.user, t.item) in train_keys:
            raise RuntimeError(
                f"evaluation triple {t} leaked into the training pool"
            )


def _model_maes(
    model: str,
    train_ds: CrossDomainDataset,
    eval_sets: list[list[RatingTriple]],
    config: ExperimentConfig,
    seed: int,
) -> list[float]:
    """Train one model and return its MAE on each domain's eval set."""
    k = int(config.dims["K"])
    t = int(config.dims["T"])
    train_cfg = TrainConfig(
        beta_schedule=config.train.beta_schedule,
        max_iters_per_beta=config.train.max_iters_per_beta,
        min_iters_per_beta=config.train.min_iters_per_beta,
        rel_ll_tol=config.train.rel_ll_tol,
        smoothing_floor=config.train.smoothing_floor,
        seed=seed,
    )
    n_domains = train_ds.n_domains
    out = []
    if model in ("pclf", "rmgm-like"):
        if model == "pclf":
            l = config.dims["L"]
            dims = ModelDims.from_dataset(
                train_ds, k, t, l if isinstance(l, int) else tuple(int(x) for x in l)
            )
            params, _ = train(train_ds, dims, train_cfg)
            w1 = config.weights if config.weights is not None else [inference.DEFAULT_W1] * n_domains
            weights = inference.PredictionWeights(w1=tuple(w1))
        else:
            params, _ = baselines.common_only_train(train_ds, k, t, train_cfg)
            weights = inference.PredictionWeights.common_only(n_domains)
        mats = inference.cluster_rating_matrices(params)
        mems = inference.memberships(params)
        for z in range(n_domains):
            users = np.array([e.user for e in eval_sets[z]], dtype=np.int64)
            items = np.array([e.item for e in eval_sets[z]], dtype=np.int64)
            truths = np.array([e.rating for e in eval_sets[z]], dtype=float)
            preds = inference.predict_many(params, mats, mems, weights, z, users, items)
            out.append(mae(preds, truths))
        return out
    if model == "fmm":
        for z in range(n_domains):
            view = train_ds.domain_view(z)
            params, _ = baselines.fmm_train(view, k, t, train_cfg)
            weights = inference.PredictionWeights.common_only(1)
            mats = inference.cluster_rating_matrices(params)
            mems = inference.memberships(params)
            users = np.array([e.user for e in eval_sets[z]], dtype=np.int64)
            items = np.array([e.item for e in eval_sets[z]], dtype=np.int64)
            truths = np.array([e.rating for e in eval_sets[z]], dtype=float)
            preds = inference.predict_many(params, mats, mems, weights, 0, users, items)
            out.append(mae(preds, truths))
        return out
    if model == "nmf":
        for z in range(n_domains):
            matrix = baselines.domain_matrix(train_ds, z)
            factors = baselines.nmf_train(
                matrix, rank=config.nmf_rank, iters=config.nmf_iters, seed=seed
            )
            preds = [
                baselines.nmf_predict(factors, e.user, e.item, train_ds.n_levels)
                for e in eval_sets[z]
            ]
            truths = [e.rating for e in eval_sets[z]]
            out.append(mae(preds, truths))
        return out
    raise DataError(f"unknown model {model!r}")


def run_experiment(config: ExperimentConfig, log=None) -> ResultsReport:
    """Repeated Given-N evaluation of every configured model.

    Per repeat r the split sampling and initialization seed is
    ``base_seed + r``; the base dataset stays fixed unless
    ``resample_subsets`` asks for per-repeat resampling.  Training pools
    from all domains are combined; a leak assertion guards the protocol.
    """
    rows: list[ResultRow] = []
    dataset = _base_dataset(config, config.base_seed if not config.synthetic
                            else config.synthetic.seed)
    for repeat in range(config.n_repeats):
        seed = config.base_seed + repeat
        if config.resample_subsets and repeat > 0:
            dataset = _base_dataset(config, seed)
        for given in config.given_n:
            splits = [
                given_n_split(dataset, z, config.n_train_users, given,
                              seed=seed + 10007 * z)
                for z in range(dataset.n_domains)
            ]
            train_triples = [t for s in splits for t in s.train_pool]
            eval_sets = [s.eval_set for s in splits]
            _assert_no_leak(train_triples, [t for s in eval_sets for t in s])
            train_ds = dataset.restrict(train_triples)
            for model in config.models:
                maes = _model_maes(model, train_ds, eval_sets, config, seed)
                for z, value in enumerate(maes):
                    rows.append(ResultRow(model, z, given, repeat, value))
                if log is not None:
                    log(f"repeat={repeat} given={given} model={model} "
                        + " ".join(f"mae[d{z}]={v:.4f}" for z, v in enumerate(maes)))
    names = ([d.name for d in config.domains] if config.domains
             else [f"d{z}" for z in range(dataset.n_domains)])
    return ResultsReport(rows=rows, domain_names=names)


def report_table(report: ResultsReport, fmt: str = "plain") -> str:
    """Aggregated mean-MAE table: one row per (domain, model), one column
    per Given-N setting, four decimal places."""
    if not report.rows:
        raise DataError("cannot render an empty report")
    if fmt not in ("plain", "csv"):
        raise DataError(f"unknown table format {fmt!r}")
    givens = report.given_values
    header = ["dataset", "model"] + [f"given{g}" for g in givens]
    body = []
    for z in report.domains:
        for model in report.models:
            cells = [f"{report.mean(model, z, g):.4f}" for g in givens]
            body.append([report.domain_names[z], model] + cells)
    if fmt == "csv":
        lines = [",".join(header)] + [",".join(row) for row in body]
        return "\n".join(lines) + "\n"
    widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    for row in body:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    return "\n".join(lines) + "\n"


def raw_results_csv(report: ResultsReport) -> str:
    """Per-repeat results: model,domain,given_n,repeat,mae."""
    lines = ["model,domain,given_n,repeat,mae"]
    for r in report.rows:
        lines.append(f"{r.model},{r.domain},{r.given_n},{r.repeat},{r.mae:.6f}")
    return "\n".join(lines) + "\n"
