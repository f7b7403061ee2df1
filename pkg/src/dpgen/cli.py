"""Command-line pipelines: synth, preprocess, train, evaluate, verify-bound, sweep.

Every run writes its artifacts plus a manifest (config snapshot, input
digests, seed, stage wall times, output paths) into the output directory.
Exit codes: 2 usage, 3 IO/format, 4 numeric failure. Seed precedence is
flag > DPGEN_SEED environment variable > config file.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import dataio
from .dataio import RunManifest, StageTimer
from .distortion import build_report
from .errors import (
    DataFormatError,
    DegenerateDataError,
    DomainError,
    TrainingDivergedError,
)
from .preprocess import DEFAULT_NORMALIZE_SCALE, log_normalize, pca_fit_transform, select_hvg
from .rng import PortableRng
from .spatial import knn_mask
from .synthetic import SynthConfig, generate, train_test_split_sections
from .train import TrainConfig, evaluate, train
from .vae import encode, posterior_sampler

SEED_ENV_VAR = "DPGEN_SEED"


def _fail(kind: str, message: str, code: int) -> int:
    print(f"error[{kind}]: {message}", file=sys.stderr)
    return code


def resolve_seed(flag_seed: int | None, config_seed: int | None) -> int | None:
    """flag > DPGEN_SEED env var > config."""
    if flag_seed is not None:
        return flag_seed
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise DataFormatError(f"{SEED_ENV_VAR} must be an integer, got {env!r}") from None
    return config_seed


def _load_dataset(features_path, coords_path, manifest: RunManifest):
    features, spot_ids = dataio.read_features(features_path)
    coord_ids, coords = dataio.load_coords(coords_path)
    index = {s: i for i, s in enumerate(coord_ids)}
    missing = [s for s in spot_ids if s not in index]
    if missing:
        raise DataFormatError(f"coords missing spot ids: {', '.join(missing[:5])}")
    coords = coords[[index[s] for s in spot_ids]]
    manifest.add_input(features_path)
    manifest.add_input(coords_path)
    return features, coords, spot_ids


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
    unknown = set(raw) - set(SynthConfig().to_dict())
    if unknown:
        raise DataFormatError(f"unknown config keys: {sorted(unknown)}")
    config = SynthConfig.from_dict(raw)
    seed = resolve_seed(args.seed, config.seed)
    config = SynthConfig.from_dict({**config.to_dict(), "seed": seed})

    manifest = RunManifest("synth", config.to_dict(), seed)
    manifest.add_input(args.config)
    timer = StageTimer(manifest)

    with timer("generate"):
        matrix, coords = generate(config)
    with timer("write"):
        dataio.write_expression_csv(out / "expression.csv", matrix)
        dataio.write_coords_csv(out / "coords.csv", matrix.spot_ids, coords)
        manifest.outputs += [out / "expression.csv", out / "coords.csv"]
        if args.split_fraction is not None:
            (train_x, train_c), (test_x, test_c) = train_test_split_sections(
                matrix, coords, axis=args.split_axis, fraction=args.split_fraction
            )
            for name, (mx, cs) in (("train", (train_x, train_c)), ("test", (test_x, test_c))):
                sub = out / name
                sub.mkdir(exist_ok=True)
                dataio.write_expression_csv(sub / "expression.csv", mx)
                dataio.write_coords_csv(sub / "coords.csv", mx.spot_ids, cs)
                manifest.outputs += [sub / "expression.csv", sub / "coords.csv"]
    dataio.write_manifest(out / "manifest.json", manifest)
    return 0


# ---------------------------------------------------------------------------
# preprocess


def cmd_preprocess(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = {
        "hvg": args.hvg,
        "pca": args.pca,
        "scale": args.scale,
        "apply_model": str(args.apply_model) if args.apply_model else None,
    }
    manifest = RunManifest("preprocess", config, None)
    timer = StageTimer(manifest)

    with timer("load"):
        matrix = dataio.load_expression(args.expr)
        coord_ids, coords = dataio.load_coords(args.coords)
        coords = dataio.align_coords(matrix, coord_ids, coords)
        manifest.add_input(args.expr)
        manifest.add_input(args.coords)

    with timer("transform"):
        if args.apply_model:
            model, header = dataio.read_pca_model(args.apply_model)
            manifest.add_input(args.apply_model)
            scale = float(header["normalize_scale"])
            wanted = header["hvg_gene_ids"]
            gene_index = {g: i for i, g in enumerate(matrix.gene_ids)}
            absent = [g for g in wanted if g not in gene_index]
            if absent:
                raise DataFormatError(f"expression lacks model genes: {', '.join(absent[:5])}")
            hvg_idx = [gene_index[g] for g in wanted]
            normalized = log_normalize(matrix, scale).subset_genes(hvg_idx)
            features = model.transform(normalized.values)
            hvg_gene_ids = wanted
        else:
            hvg_idx = select_hvg(matrix, args.hvg, args.scale)
            normalized = log_normalize(matrix, args.scale).subset_genes(hvg_idx)
            model, features = pca_fit_transform(normalized.values, args.pca)
            hvg_gene_ids = normalized.gene_ids
            dataio.write_pca_model(out / "pca_model.bin", model, hvg_idx, hvg_gene_ids, args.scale)
            manifest.outputs.append(out / "pca_model.bin")

    with timer("write"):
        dataio.write_features(out / "features.bin", features, matrix.spot_ids)
        dataio.write_coords_csv(out / "coords.csv", matrix.spot_ids, coords)
        manifest.outputs += [out / "features.bin", out / "coords.csv"]
    dataio.write_manifest(out / "manifest.json", manifest)
    return 0


# ---------------------------------------------------------------------------
# train


def _train_config_from_args(args) -> TrainConfig:
    base = TrainConfig().to_dict()
    if args.config:
        file_conf = json.loads(Path(args.config).read_text(encoding="utf-8"))
        unknown = set(file_conf) - set(base)
        if unknown:
            raise DataFormatError(f"unknown config keys: {sorted(unknown)}")
        base.update(file_conf)
    overrides = {
        "alpha": args.alpha,
        "beta": args.beta,
        "latent_dim": args.latent,
        "hidden_dim": args.hidden,
        "mask_k": args.mask_k,
        "lr": args.lr,
        "batch_size": args.batch_size,
        "max_epochs": args.max_epochs,
        "patience": args.patience,
        "min_improvement": args.min_improvement,
        "pca_k": args.pca_k,
    }
    base.update({k: v for k, v in overrides.items() if v is not None})
    base["seed"] = resolve_seed(args.seed, base.get("seed", 0))
    return TrainConfig.from_dict(base)


def cmd_train(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = _train_config_from_args(args)
    manifest = RunManifest("train", config.to_dict(), config.seed)
    timer = StageTimer(manifest)

    with timer("load"):
        features, coords, spot_ids = _load_dataset(args.features, args.coords, manifest)
        if args.config:
            manifest.add_input(args.config)

    with timer("train"):
        params, history = train(config, features, coords)

    with timer("write"):
        dataio.write_checkpoint(out / "checkpoint.bin", params, config.to_dict(), config.seed)
        dataio.write_history_csv(out / "history.csv", history)
        manifest.outputs += [out / "checkpoint.bin", out / "history.csv"]
        if args.export_mask:
            dataio.write_mask_edges_csv(out / "mask_edges.csv", knn_mask(coords, config.mask_k))
            manifest.outputs.append(out / "mask_edges.csv")
        if args.figures:
            from .figures import save_history_figure

            save_history_figure(history, out / "history.png")
            manifest.outputs.append(out / "history.png")
    dataio.write_manifest(out / "manifest.json", manifest)
    return 0


# ---------------------------------------------------------------------------
# evaluate


def cmd_evaluate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest("evaluate", {"k": args.k}, None)
    timer = StageTimer(manifest)

    with timer("load"):
        params, header = dataio.read_checkpoint(args.checkpoint)
        manifest.add_input(args.checkpoint)
        features, coords, spot_ids = _load_dataset(args.features, args.coords, manifest)
        if features.shape[1] != params.in_dim:
            raise DataFormatError(
                f"features have {features.shape[1]} dims but checkpoint expects {params.in_dim}"
            )

    with timer("evaluate"):
        metrics = evaluate(params, features, coords, k=args.k)
        mu, _ = encode(params, features)

    with timer("write"):
        dataio.write_json(out / "metrics.json", metrics.to_dict())
        dataio.write_latent_csv(out / "latent.csv", spot_ids, mu)
        manifest.outputs += [out / "metrics.json", out / "latent.csv"]
        if args.figures:
            from .figures import save_latent_figure

            save_latent_figure(coords, mu, out / "latent.png")
            manifest.outputs.append(out / "latent.png")
    dataio.write_manifest(out / "manifest.json", manifest)
    return 0


# ---------------------------------------------------------------------------
# verify-bound


def cmd_verify_bound(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = resolve_seed(args.seed, 0)
    config = {"epsilon": args.epsilon, "delta": args.delta, "draws": args.draws}
    manifest = RunManifest("verify-bound", config, seed)
    timer = StageTimer(manifest)

    with timer("load"):
        params, _ = dataio.read_checkpoint(args.checkpoint)
        manifest.add_input(args.checkpoint)
        features, coords, _ = _load_dataset(args.features, args.coords, manifest)

    with timer("verify"):
        report = build_report(
            posterior_sampler(params),
            features,
            coords,
            lam=params.lambda_value,
            epsilon=args.epsilon,
            delta=args.delta,
            n_draws=args.draws,
            rng=PortableRng(seed),
        )

    with timer("write"):
        dataio.write_json(out / "distortion_report.json", report.to_dict())
        manifest.outputs.append(out / "distortion_report.json")
    dataio.write_manifest(out / "manifest.json", manifest)
    if report.lower_bound_holds:
        print(f"l_hat={report.l_hat:.6g} l_bound={report.l_bound:.6g} coverage={report.coverage:.4f}")
    else:
        print(f"lower bound fails at lambda={report.lam:.6g}: coverage={report.coverage:.4f}")
    return 0


# ---------------------------------------------------------------------------
# sweep


def _sweep_run(task: dict) -> dict:
    features, spot_ids = dataio.read_features(task["train_features"])
    coord_ids, coords = dataio.load_coords(task["train_coords"])
    index = {s: i for i, s in enumerate(coord_ids)}
    coords = coords[[index[s] for s in spot_ids]]
    test_features, test_spot_ids = dataio.read_features(task["test_features"])
    test_coord_ids, test_coords = dataio.load_coords(task["test_coords"])
    test_index = {s: i for i, s in enumerate(test_coord_ids)}
    test_coords = test_coords[[test_index[s] for s in test_spot_ids]]

    config = TrainConfig.from_dict(task["config"])
    params, history = train(config, features, coords)
    metrics = evaluate(params, test_features, test_coords, k=task["metrics_k"])

    run_dir = Path(task["run_dir"])
    run_dir.mkdir(parents=True, exist_ok=True)
    dataio.write_checkpoint(run_dir / "checkpoint.bin", params, config.to_dict(), config.seed)
    dataio.write_history_csv(run_dir / "history.csv", history)
    return {
        "alpha": config.alpha,
        "seed": config.seed,
        "mse": metrics.mse,
        "morans_i_mean": metrics.morans_i_mean,
        "gearys_c_mean": metrics.gearys_c_mean,
        "lambda": metrics.lambda_value,
        "epochs": len(history),
    }


def cmd_sweep(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        alphas = [float(a) for a in args.alphas.split(",") if a != ""]
    except ValueError:
        raise DataFormatError(f"--alphas must be a comma-separated number list, got {args.alphas!r}") from None
    if not alphas:
        raise DataFormatError("--alphas must name at least one value")
    base_seed = resolve_seed(args.seed, 0)
    seeds = [base_seed + i for i in range(args.seeds)]

    base = _train_config_from_args(args).to_dict()
    manifest = RunManifest("sweep", {**base, "alphas": alphas, "seeds": seeds}, base_seed)
    for path in (args.train_features, args.train_coords, args.test_features, args.test_coords):
        manifest.add_input(path)
    timer = StageTimer(manifest)

    tasks = []
    for alpha in alphas:
        for seed in seeds:
            run_conf = dict(base, alpha=alpha, seed=seed)
            tasks.append(
                {
                    "config": run_conf,
                    "metrics_k": args.k,
                    "train_features": str(args.train_features),
                    "train_coords": str(args.train_coords),
                    "test_features": str(args.test_features),
                    "test_coords": str(args.test_coords),
                    "run_dir": str(out / f"alpha_{alpha:g}_seed_{seed}"),
                }
            )

    with timer("runs"):
        if args.jobs > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                rows = list(pool.map(_sweep_run, tasks))
        else:
            rows = [_sweep_run(t) for t in tasks]
    rows.sort(key=lambda r: (r["alpha"], r["seed"]))

    with timer("write"):
        dataio.write_sweep_csv(out / "sweep.csv", rows)
        manifest.outputs.append(out / "sweep.csv")
        if args.figures:
            from .figures import save_sweep_figure

            save_sweep_figure(rows, out / "sweep.png")
            manifest.outputs.append(out / "sweep.png")
    dataio.write_manifest(out / "manifest.json", manifest)
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its keys")
    p.add_argument("--alpha", type=float, default=None, help="alignment regularization weight")
    p.add_argument("--beta", type=float, default=None, help="KL term weight")
    p.add_argument("--latent", type=int, default=None, help="latent dimension")
    p.add_argument("--hidden", type=int, default=None, help="hidden layer width")
    p.add_argument("--mask-k", type=int, default=None, help="k for the k-NN loss mask")
    p.add_argument("--lr", type=float, default=None, help="Adam learning rate")
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--max-epochs", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--min-improvement", type=float, default=None)
    p.add_argument("--pca-k", type=int, default=None, help="recorded feature dimensionality")
    p.add_argument("--seed", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpgen", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic spatial expression dataset")
    p.add_argument("--config", required=True, help="SynthConfig JSON file")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--split-fraction", type=float, default=None, help="also write interleaved train/test splits")
    p.add_argument("--split-axis", type=int, choices=(0, 1), default=1)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="HVG selection, log-normalization, PCA projection")
    p.add_argument("--expr", required=True, help="expression CSV or MatrixMarket .mtx")
    p.add_argument("--coords", required=True, help="spot_id,x,y CSV")
    p.add_argument("--hvg", type=int, default=3000)
    p.add_argument("--pca", type=int, default=256)
    p.add_argument("--scale", type=float, default=DEFAULT_NORMALIZE_SCALE)
    p.add_argument("--apply-model", default=None, help="reuse a stored pca_model.bin instead of fitting")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="fit the model on preprocessed features")
    p.add_argument("--features", required=True, help="features.bin from preprocess")
    p.add_argument("--coords", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--export-mask", action="store_true", help="write the loss mask edge list CSV")
    p.add_argument("--figures", action=argparse.BooleanOptionalAction, default=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="reconstruction MSE and latent autocorrelation")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--coords", required=True)
    p.add_argument("--k", type=int, default=5, help="neighbors for I and C")
    p.add_argument("--out", required=True)
    p.add_argument("--figures", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("verify-bound", help="estimate the distortion constant and its upper bound")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--coords", required=True)
    p.add_argument("--epsilon", type=float, default=0.05)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--draws", type=int, default=8, help="posterior samples per spot")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_verify_bound)

    p = sub.add_parser("sweep", help="train/evaluate a grid of alphas and seeds")
    p.add_argument("--alphas", required=True, help="comma-separated regularization weights")
    p.add_argument("--seeds", type=int, default=5, help="number of consecutive seeds per alpha")
    p.add_argument("--train-features", required=True)
    p.add_argument("--train-coords", required=True)
    p.add_argument("--test-features", required=True)
    p.add_argument("--test-coords", required=True)
    p.add_argument("--k", type=int, default=5, help="neighbors for I and C")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.add_argument("--out", required=True)
    p.add_argument("--figures", action=argparse.BooleanOptionalAction, default=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DataFormatError, DegenerateDataError, FileNotFoundError, OSError, json.JSONDecodeError) as exc:
        return _fail("io", str(exc), 3)
    except (TrainingDivergedError, DomainError, FloatingPointError) as exc:
        return _fail("numeric", str(exc), 4)
    except (ValueError, TypeError) as exc:
        parser.exit(2, f"error[usage]: {exc}\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
