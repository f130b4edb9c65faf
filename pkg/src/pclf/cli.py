"""Command-line interface.

Subcommands: ingest (raw files -> canonical dataset), train (dataset ->
checkpoint), predict (checkpoint -> rating CSV), evaluate (experiment
config -> MAE tables), synth (planted synthetic dataset), inspect
(checkpoint summary).  Every command is deterministic given its flags and
seeds and exits nonzero with a one-line diagnostic on error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import baselines, evaluate, inference
from .checkpoint import (
    Checkpoint,
    CheckpointError,
    load_checkpoint,
    save_checkpoint,
)
from .data import (
    DataError,
    ScaleSpec,
    build_dataset,
    load_dataset,
    parse_ratings,
    save_dataset,
    select_subset,
)
from .em import ModelDims, ModelError, TrainConfig, train


def _parse_scale(text: str, levels: int) -> ScaleSpec:
    try:
        lo, hi = (float(x) for x in text.split(":"))
    except ValueError as exc:
        raise DataError(f"scale must look like MIN:MAX, got {text!r}") from exc
    return ScaleSpec(lo, hi, levels)


def _parse_int_list(text: str, expect: int, what: str) -> list[int]:
    values = [int(x) for x in text.split(",")]
    if len(values) == 1:
        values = values * expect
    if len(values) != expect:
        raise DataError(f"{what} needs 1 or {expect} comma-separated values, got {text!r}")
    return values


def _parse_float_list(text: str, expect: int, what: str) -> list[float]:
    values = [float(x) for x in text.split(",")]
    if len(values) == 1:
        values = values * expect
    if len(values) != expect:
        raise DataError(f"{what} needs 1 or {expect} comma-separated values, got {text!r}")
    return values


def cmd_ingest(args) -> int:
    if len(args.scale) not in (1, len(args.input)):
        raise DataError("--scale must be given once or once per --input")
    scales = args.scale if len(args.scale) == len(args.input) else args.scale * len(args.input)
    columns = tuple(int(x) for x in args.columns.split(","))
    if len(columns) != 3:
        raise DataError(f"--columns needs 3 entries, got {args.columns!r}")
    per_domain = []
    for path, scale_text in zip(args.input, scales):
        scale = _parse_scale(scale_text, args.levels)
        raw = parse_ratings(
            path, delimiter=args.delimiter, column_map=columns,
            scale=scale, skip_header=args.skip_header,
        )
        if args.select_users or args.select_items:
            raw = select_subset(
                raw,
                n_users=args.select_users or len({r.user_id for r in raw}),
                n_items=args.select_items or len({r.item_id for r in raw}),
                min_user_ratings=args.min_user_ratings,
                min_item_ratings=args.min_item_ratings,
                seed=args.seed,
            )
        per_domain.append((raw, scale))
    dataset = build_dataset(per_domain)
    save_dataset(dataset, args.out)
    print(f"domains={dataset.n_domains} levels={dataset.n_levels}")
    for z in range(dataset.n_domains):
        print(
            f"domain {z}: users={dataset.n_users[z]} items={dataset.n_items[z]} "
            f"ratings={dataset.n_ratings[z]}"
        )
    return 0


def _parse_betas(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(","))


def cmd_train(args) -> int:
    dataset = load_dataset(args.dataset)
    z = dataset.n_domains
    config = TrainConfig(
        beta_schedule=_parse_betas(args.betas),
        max_iters_per_beta=args.max_iters,
        min_iters_per_beta=args.min_iters,
        rel_ll_tol=args.tol,
        smoothing_floor=args.floor,
        seed=args.seed,
    )
    if args.model == "nmf":
        if z != 1:
            raise ModelError(f"nmf trains one domain at a time, got {z} domains")
        factors = baselines.nmf_train(
            baselines.domain_matrix(dataset, 0),
            rank=args.rank, iters=args.nmf_iters, seed=args.seed,
        )
        ckpt = Checkpoint(model_kind="nmf", seed=args.seed, trace=[],
                          factors=factors, n_levels=dataset.n_levels)
        save_checkpoint(args.out, ckpt)
        print(f"model=nmf rank={args.rank} objective={factors.objective[-1]:.6f}")
        return 0

    if args.model == "pclf":
        specific = _parse_int_list(args.specific_clusters, z, "-L/--specific-clusters")
        dims = ModelDims.from_dataset(
            dataset, args.user_clusters, args.common_clusters, tuple(specific)
        )
        params, trace = train(dataset, dims, config)
        default_w1 = [args.w1] * z
    elif args.model == "fmm":
        params, trace = baselines.fmm_train(
            dataset, args.user_clusters, args.common_clusters, config
        )
        default_w1 = [1.0]
    elif args.model == "rmgm-like":
        params, trace = baselines.common_only_train(
            dataset, args.user_clusters, args.common_clusters, config
        )
        default_w1 = [1.0] * z
    else:
        raise ModelError(f"unknown model {args.model!r}")

    ckpt = Checkpoint(model_kind=args.model, seed=args.seed, trace=trace,
                      params=params, default_w1=default_w1)
    save_checkpoint(args.out, ckpt)
    d = params.dims
    print(
        f"model={args.model} K={d.n_user_clusters} T={d.n_common_clusters} "
        f"L={','.join(str(x) for x in d.n_specific_clusters)}"
    )
    per_beta: dict[float, int] = {}
    for entry in trace:
        per_beta[entry.beta] = entry.iteration + 1
    for beta, iters in per_beta.items():
        print(f"beta={beta:g} iterations={iters}")
    print(f"final_log_likelihood={trace[-1].log_likelihood:.6f}")
    return 0


def _parse_cell(text: str) -> tuple[int, int, int, int]:
    parts = [int(x) for x in text.split(",")]
    if len(parts) == 3:
        return parts[0], parts[1], parts[0], parts[2]
    if len(parts) == 4:
        return parts[0], parts[1], parts[2], parts[3]
    raise DataError(
        f"cell must be 'domain,user,item' or 'udomain,user,idomain,item', got {text!r}"
    )


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.model_kind == "nmf":
        if args.complete is None and not args.cell and not args.cells:
            raise DataError("nothing to predict: give --cell/--cells or --complete")
        lines = ["domain,user_idx,item_idx,predicted_rating"]
        cells = _collect_cells(args)
        if args.complete is not None:
            if args.complete != 0:
                raise DataError("nmf checkpoints hold a single domain (use --complete 0)")
            m = ckpt.factors.u_factors.shape[0]
            n = ckpt.factors.v_factors.shape[0]
            cells = [(0, u, 0, v) for u in range(m) for v in range(n)]
        for du, u, dv, v in cells:
            if du != dv or du != 0:
                raise DataError("nmf checkpoints predict only domain-0 cells")
            value = baselines.nmf_predict(ckpt.factors, u, v, ckpt.n_levels)
            lines.append(f"0,{u},{v},{value:.6f}")
        _write_lines(args.out, ["# model_kind=nmf"] + lines)
        return 0

    params = ckpt.params
    z = params.dims.n_domains
    if args.w1 is not None:
        w1 = _parse_float_list(args.w1, z, "--w1")
    elif ckpt.default_w1 is not None:
        w1 = list(ckpt.default_w1)
    else:
        w1 = [inference.DEFAULT_W1] * z
    weights = inference.PredictionWeights(w1=tuple(w1))
    mats = inference.cluster_rating_matrices(params)
    mems = inference.memberships(params)
    head = f"# model_kind={ckpt.model_kind} w1={','.join(f'{w:g}' for w in w1)}"

    if args.complete is not None:
        lines = ["domain,user_idx,item_idx,predicted_rating"]
        def sink(u, row):
            for v, value in enumerate(row):
                lines.append(f"{args.complete},{u},{v},{value:.6f}")
        inference.complete_matrix(params, mats, mems, weights, args.complete, sink)
        _write_lines(args.out, [head] + lines)
        return 0

    cells = _collect_cells(args)
    if not cells:
        raise DataError("nothing to predict: give --cell/--cells or --complete")
    lines = ["user_domain,user_idx,item_domain,item_idx,predicted_rating,cross"]
    for du, u, dv, v in cells:
        if du == dv:
            value = inference.predict(params, mats, mems, weights, du, u, v)
            cross = 0
        else:
            value = inference.predict_cross(
                params, mats, mems, (du, u), (dv, v),
                weights=weights, mix_specific=args.mix_specific,
            )
            cross = 1
        lines.append(f"{du},{u},{dv},{v},{value:.6f},{cross}")
    _write_lines(args.out, [head] + lines)
    return 0


def _collect_cells(args):
    cells = [_parse_cell(c) for c in (args.cell or [])]
    if args.cells:
        with open(args.cells, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line and not line.startswith("#"):
                    cells.append(_parse_cell(line))
    return cells


def _write_lines(path, lines) -> None:
    if path is None:
        for line in lines:
            print(line)
        return
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def cmd_evaluate(args) -> int:
    config = evaluate.load_config(args.config)
    if args.repeats is not None:
        config.n_repeats = args.repeats
    os.makedirs(args.out, exist_ok=True)
    report = evaluate.run_experiment(config, log=print if args.verbose else None)
    with open(os.path.join(args.out, "results.csv"), "w", encoding="utf-8") as fh:
        fh.write(evaluate.raw_results_csv(report))
    table = evaluate.report_table(report, fmt="plain")
    with open(os.path.join(args.out, "table.txt"), "w", encoding="utf-8") as fh:
        fh.write(table)
    with open(os.path.join(args.out, "table.csv"), "w", encoding="utf-8") as fh:
        fh.write(evaluate.report_table(report, fmt="csv"))
    print(table, end="")
    return 0


def cmd_synth(args) -> int:
    if args.spec:
        with open(args.spec, "r", encoding="utf-8") as fh:
            spec = evaluate.synthetic_spec_from_dict(json.load(fh))
    else:
        z = args.domains
        dims = ModelDims(
            n_domains=z,
            n_user_clusters=args.user_clusters,
            n_common_clusters=args.common_clusters,
            n_specific_clusters=tuple(_parse_int_list(args.specific_clusters, z, "-L")),
            n_levels=args.levels,
            n_users=tuple(_parse_int_list(args.users, z, "--users")),
            n_items=tuple(_parse_int_list(args.items, z, "--items")),
        )
        spec = evaluate.SyntheticSpec(
            dims=dims,
            w1=tuple(_parse_float_list(args.w1, z, "--w1")),
            density=args.density,
            seed=args.seed,
        )
    dataset, true_params = evaluate.synth_generate(spec)
    save_dataset(dataset, args.out)
    if args.params_out:
        save_checkpoint(args.params_out, Checkpoint(
            model_kind="pclf", seed=spec.seed, trace=[], params=true_params,
            default_w1=list(spec.w1),
        ))
    print(f"domains={dataset.n_domains} levels={dataset.n_levels}")
    for z in range(dataset.n_domains):
        print(
            f"domain {z}: users={dataset.n_users[z]} items={dataset.n_items[z]} "
            f"ratings={dataset.n_ratings[z]}"
        )
    return 0


def cmd_inspect(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    print(f"format={ckpt.model_kind} seed={ckpt.seed}")
    if ckpt.model_kind == "nmf":
        m, rank = ckpt.factors.u_factors.shape
        n = ckpt.factors.v_factors.shape[0]
        print(f"users={m} items={n} rank={rank} levels={ckpt.n_levels}")
        if ckpt.factors.objective:
            print(f"final_objective={ckpt.factors.objective[-1]:.6f}")
        return 0
    params = ckpt.params
    d = params.dims
    print(
        f"domains={d.n_domains} K={d.n_user_clusters} T={d.n_common_clusters} "
        f"L={','.join(str(x) for x in d.n_specific_clusters)} levels={d.n_levels}"
    )
    mats = inference.cluster_rating_matrices(params)
    print("common cluster-level rating matrix:")
    print(np.array2string(mats.s_com, precision=4, suppress_small=True))
    for z in range(d.n_domains):
        if d.n_specific_clusters[z] == 0:
            continue
        print(f"specific cluster-level rating matrix, domain {z}:")
        print(np.array2string(mats.s_spe[z], precision=4, suppress_small=True))
    top = args.top
    for k in range(d.n_user_clusters):
        best = np.argsort(params.cond_u[k])[::-1][:top]
        print(f"user cluster {k} top users: {', '.join(str(int(u)) for u in best)}")
    for t in range(d.n_common_clusters):
        best = np.argsort(params.cond_vcom[t])[::-1][:top]
        print(f"common item cluster {t} top items: {', '.join(str(int(v)) for v in best)}")
    if ckpt.trace:
        print(f"final_log_likelihood={ckpt.trace[-1].log_likelihood:.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pclf",
        description="Cross-domain cluster-level rating model: train, predict, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse raw rating files into a canonical dataset")
    p.add_argument("--input", action="append", required=True, help="rating file (repeat per domain)")
    p.add_argument("--scale", action="append", required=True, help="source scale MIN:MAX (repeat per domain)")
    p.add_argument("--levels", type=int, default=5, help="target rating levels R")
    p.add_argument("--delimiter", default="\t")
    p.add_argument("--columns", default="0,1,2", help="user,item,rating column indices")
    p.add_argument("--skip-header", action="store_true")
    p.add_argument("--select-users", type=int, default=0, help="subsample to this many users")
    p.add_argument("--select-items", type=int, default=0, help="subsample to this many items")
    p.add_argument("--min-user-ratings", type=int, default=0,
                   help="users need more than this many ratings to qualify")
    p.add_argument("--min-item-ratings", type=int, default=0,
                   help="items need more than this many ratings to qualify")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--dataset", required=True, help="canonical dataset directory")
    p.add_argument("--model", default="pclf", choices=["pclf", "fmm", "rmgm-like", "nmf"])
    p.add_argument("-K", "--user-clusters", type=int, default=20)
    p.add_argument("-T", "--common-clusters", type=int, default=10)
    p.add_argument("-L", "--specific-clusters", default="15",
                   help="specific clusters per domain, e.g. 15 or 15,15")
    p.add_argument("--betas", default="0.5,0.6,0.7,0.8,0.9,1.0",
                   help="ascending inverse-temperature schedule ending at 1.0")
    p.add_argument("--max-iters", type=int, default=50)
    p.add_argument("--min-iters", type=int, default=10,
                   help="iterations per beta before the tolerance is consulted")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--floor", type=float, default=1e-10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--w1", type=float, default=inference.DEFAULT_W1,
                   help="default prediction weight stored in the checkpoint")
    p.add_argument("--rank", type=int, default=20, help="nmf rank")
    p.add_argument("--nmf-iters", type=int, default=200)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict ratings from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--w1", default=None,
                   help="per-domain cross-domain weight(s), e.g. 0.35 or 0.35,0.5")
    p.add_argument("--cell", action="append",
                   help="'domain,user,item' or 'udomain,user,idomain,item' (repeatable)")
    p.add_argument("--cells", help="file with one cell per line")
    p.add_argument("--complete", type=int, default=None,
                   help="stream every cell of this domain")
    p.add_argument("--mix-specific", action="store_true",
                   help="blend the item domain's specific pattern into cross-domain cells")
    p.add_argument("--out", default=None, help="output CSV (stdout if omitted)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="run a Given-N experiment from a config file")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--repeats", type=int, default=None, help="override n_repeats")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="generate a planted synthetic dataset")
    p.add_argument("--spec", help="synthetic spec JSON file")
    p.add_argument("--domains", type=int, default=2)
    p.add_argument("-K", "--user-clusters", type=int, default=6)
    p.add_argument("-T", "--common-clusters", type=int, default=4)
    p.add_argument("-L", "--specific-clusters", default="3")
    p.add_argument("--levels", type=int, default=5)
    p.add_argument("--users", default="300")
    p.add_argument("--items", default="500")
    p.add_argument("--density", type=float, default=0.05)
    p.add_argument("--w1", default="0.5")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--params-out", help="also save the generating model checkpoint")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("inspect", help="summarize a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--top", type=int, default=5)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DataError, ModelError, CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
