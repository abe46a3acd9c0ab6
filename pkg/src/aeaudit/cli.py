"""Command-line interface.

Subcommands: gen-data, train, score, audit, attack. Every command is
deterministic given its arguments, seed, and input files: artifacts are
byte-identical across repeated runs. Exit codes are a stable contract:

    0   success, no finding
    2   usage or input error
    3   success, with an out-of-bounds finding (audit)
    1   internal error
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .adversary import (
    construct_linear_ae_adversary,
    construct_pca_adversary,
    latent_decode_adversary,
    pgd_adversary,
    write_pgm,
)
from .anomaly import is_undetected, score, table_summary, write_score_csv
from .audit import (
    render_heatmap,
    scan_input_space,
    scan_latent_space,
    write_audit_report,
    write_grid_csv,
)
from .datagen import (
    Dataset,
    SyntheticSpec,
    generate,
    load_csv,
    load_mnist,
    save_csv,
    standardization_stats,
)
from .errors import AeauditError, InputDomainError
from .models import (
    AutoencoderModel,
    PcaModel,
    Preprocessing,
    build_conv_autoencoder,
    build_mlp_autoencoder,
    load_model,
    model_input_dim,
    save_model,
)
from .training import TrainConfig, train, write_train_report

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_FINDING = 3


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated floats, got {text!r}")


def _pair(text: str) -> tuple[float, float]:
    vals = _float_list(text)
    if len(vals) != 2:
        raise argparse.ArgumentTypeError(f"expected two floats, got {text!r}")
    return vals[0], vals[1]


def _load_dataset(args) -> Dataset:
    return load_csv(args.data, has_header=args.has_header)


def _say(msg: str) -> None:
    print(msg, file=sys.stderr)


# --- gen-data -----------------------------------------------------------------


def cmd_gen_data(args) -> int:
    spec_kwargs = dict(
        family=args.family,
        samples_per_component=args.n,
        seed=args.seed,
    )
    if args.mean is not None:
        spec_kwargs["means"] = tuple(tuple(m) for m in args.mean)
    if args.cov is not None:
        covs = []
        for flat in args.cov:
            if len(flat) != 4:
                raise InputDomainError("--cov takes 4 floats per component (row-major 2x2)")
            covs.append(((flat[0], flat[1]), (flat[2], flat[3])))
        spec_kwargs["covariances"] = tuple(covs)
    if args.noise is not None:
        spec_kwargs["noise_scale"] = args.noise
    if args.x_range is not None:
        spec_kwargs["x_range"] = args.x_range
    if args.alpha_range is not None:
        spec_kwargs["alpha_range"] = args.alpha_range

    spec = SyntheticSpec(**spec_kwargs)
    dataset = generate(spec)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_csv(dataset, out)
    sidecar = out.with_name(out.stem + ".spec.json")
    with open(sidecar, "w", encoding="utf-8") as f:
        json.dump(spec.to_json_dict(), f, sort_keys=True, indent=1)
        f.write("\n")
    _say(f"wrote {dataset.num_samples} samples to {out} (spec: {sidecar})")
    return EXIT_OK


# --- train ----------------------------------------------------------------------


def _train_config(args) -> TrainConfig:
    overrides = {}
    if args.config:
        with open(args.config, encoding="utf-8") as f:
            overrides = json.load(f)
        if not isinstance(overrides, dict):
            raise InputDomainError(f"{args.config}: config must be a JSON object")
    cfg = dict(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        optimizer=args.optimizer,
        seed=args.seed,
        shuffle=not args.full_batch,
        checkpoint_interval=args.checkpoint_every,
        checkpoint_dir=args.checkpoint_dir,
    )
    cfg.update(overrides)
    return TrainConfig.from_json_dict(cfg)


def cmd_train(args) -> int:
    if (args.arch is None) == (args.preset is None):
        raise InputDomainError("give exactly one of --arch or --preset")

    if args.preset is not None:
        if args.preset != "mnist-conv2":
            raise InputDomainError(f"unknown preset {args.preset!r}")
        if not args.mnist_images or not args.mnist_labels:
            raise InputDomainError("--preset mnist-conv2 needs --mnist-images and --mnist-labels")
        keep = set(args.digits) if args.digits is not None else None
        dataset = load_mnist(
            args.mnist_images,
            args.mnist_labels,
            keep_digits=keep,
            max_per_digit=args.max_per_digit,
        )
        side = int(np.sqrt(dataset.num_features))
        if side * side != dataset.num_features:
            raise InputDomainError("mnist-conv2 preset expects square images")
        model = build_conv_autoencoder(
            image_hw=(side, side), latent_dim=args.latent_dim, seed=args.seed
        )
    else:
        dataset = _load_dataset(args)
        preprocessing = None
        if args.standardize:
            mean, std = standardization_stats(dataset.x)
            preprocessing = Preprocessing(mean=mean, std=std)
        model = build_mlp_autoencoder(
            args.arch, activation=args.act, seed=args.seed, preprocessing=preprocessing
        )

    cfg = _train_config(args)
    if args.full_batch:
        cfg = TrainConfig.from_json_dict(
            {**dataclasses.asdict(cfg), "batch_size": dataset.num_samples, "shuffle": False}
        )
    if cfg.checkpoint_dir:
        Path(cfg.checkpoint_dir).mkdir(parents=True, exist_ok=True)
    trained, report = train(model, dataset, cfg)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(trained, out)
    if args.report:
        write_train_report(report, args.report)
    _say(
        f"trained {cfg.epochs} epochs in {report.wall_time_s:.2f}s, "
        f"final loss {report.final_loss:.6g}; model: {out}"
    )
    return EXIT_OK


# --- score -----------------------------------------------------------------------


def cmd_score(args) -> int:
    model = load_model(args.model)
    dataset = _load_dataset(args)
    table = score(model, dataset, convention=args.convention)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_score_csv(table, out)
    summary = table_summary(table)
    if args.baseline:
        floor = _baseline_min(args.baseline)
        flagged = sorted(e.index for e in table.entries if e.score <= floor)
        summary["baseline_min_score"] = floor
        summary["flagged_indices"] = flagged
        summary["flagged"] = len(flagged)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def _baseline_min(path) -> float:
    best = None
    with open(path, encoding="utf-8") as f:
        header = f.readline().strip().split(",")
        try:
            col = header.index("score")
        except ValueError:
            raise InputDomainError(f"{path}: baseline CSV needs a 'score' column")
        for line in f:
            if not line.strip():
                continue
            value = float(line.split(",")[col])
            best = value if best is None else min(best, value)
    if best is None:
        raise InputDomainError(f"{path}: baseline CSV has no rows")
    return best


# --- audit ------------------------------------------------------------------------


def cmd_audit(args) -> int:
    model = load_model(args.model)
    dataset = _load_dataset(args)

    space = args.space
    if space == "auto":
        if model_input_dim(model) == 2:
            space = "input"
        elif getattr(model, "latent_dim", 0) == 2:
            space = "latent"
        else:
            raise InputDomainError(
                "model has neither a 2-D input nor a 2-D latent space; "
                "no plane to audit"
            )

    if args.bounds is not None and len(args.bounds) != 4:
        raise InputDomainError("--bounds takes xmin,xmax,ymin,ymax")
    if len(args.resolution) != 2:
        raise InputDomainError("--resolution takes nx,ny")
    kwargs = dict(
        bounds=tuple(args.bounds) if args.bounds else None,
        resolution=(args.resolution[0], args.resolution[1]),
        epsilon=args.epsilon,
        far_threshold=args.far_threshold,
    )
    if space == "input":
        grid = scan_input_space(model, dataset.x, **kwargs)
    else:
        grid = scan_latent_space(model, dataset.x, **kwargs)

    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    write_grid_csv(grid, outdir / "grid.csv")
    write_audit_report(grid, outdir / "report.json", model_ref=str(args.model), seed=args.seed)
    render_heatmap(grid, outdir / "heatmap.svg")

    findings = grid.out_of_bounds_regions()
    _say(
        f"audited {grid.space}: {len(grid.regions)} sub-epsilon regions, "
        f"{len(findings)} out of bounds; artifacts in {outdir}"
    )
    return EXIT_FINDING if findings else EXIT_OK


# --- attack -------------------------------------------------------------------------


def cmd_attack(args) -> int:
    model = load_model(args.model)
    dataset = _load_dataset(args)

    if args.method == "analytic":
        if isinstance(model, PcaModel):
            result = construct_pca_adversary(model, dataset.x, delta=args.delta)
        elif isinstance(model, AutoencoderModel):
            try:
                result = construct_linear_ae_adversary(model, dataset.x, delta=args.delta)
            except InputDomainError as exc:
                raise InputDomainError(
                    f"analytic attacks need a PCA model or an all-linear autoencoder: {exc}"
                ) from None
        else:
            raise InputDomainError("unsupported model kind for analytic attack")
    elif args.method == "latent":
        if args.z is None:
            raise InputDomainError("--method latent needs --z")
        if not isinstance(model, AutoencoderModel):
            raise InputDomainError("--method latent needs an autoencoder model")
        result = latent_decode_adversary(model, np.array(args.z), dataset.x)
    else:
        if not isinstance(model, AutoencoderModel):
            raise InputDomainError("--method pgd needs an autoencoder model")
        result = pgd_adversary(
            model,
            dataset.x,
            delta=args.delta,
            steps=args.steps,
            step_size=args.step_size,
            restarts=args.restarts,
            seed=args.seed,
        )

    table = score(model, dataset)
    verdict = is_undetected(result.a, model, table)
    doc = result.to_json_dict()
    doc["verdict"] = {
        "undetected": verdict.undetected,
        "score": verdict.score,
        "min_normal_score": verdict.min_normal_score,
        "margin": verdict.margin,
        "ratio": verdict.ratio if np.isfinite(verdict.ratio) else None,
    }
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True, indent=1)
        f.write("\n")
    if args.pgm:
        n = result.a.shape[0]
        side = int(np.sqrt(n))
        if side * side != n:
            raise InputDomainError("--pgm needs a square image-shaped adversary")
        write_pgm(result.a, (side, side), args.pgm)
    print(json.dumps(doc["verdict"], sort_keys=True))
    return EXIT_OK


# --- parser ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aeaudit",
        description="Train reconstruction-loss anomaly detectors and hunt for their blind spots.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset CSV")
    g.add_argument("--family", required=True, choices=["gaussian", "double_gaussian", "banana", "diagonal"])
    g.add_argument("--n", type=int, default=100, help="samples per component")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--mean", type=_float_list, action="append", help="component mean, e.g. 0,0")
    g.add_argument("--cov", type=_float_list, action="append", help="row-major 2x2 covariance")
    g.add_argument("--noise", type=float, help="banana noise scale")
    g.add_argument("--x-range", type=_pair, help="banana x1 range lo,hi")
    g.add_argument("--alpha-range", type=_pair, help="diagonal alpha range lo,hi")
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train an autoencoder and save the model")
    t.add_argument("--data", help="training CSV")
    t.add_argument("--has-header", action="store_true")
    t.add_argument("--arch", type=_int_list, help="layer sizes, e.g. 2,5,1,5,2")
    t.add_argument("--act", default="relu", choices=["relu", "sigmoid", "linear"])
    t.add_argument("--preset", help="mnist-conv2")
    t.add_argument("--mnist-images", help="IDX image file for the preset")
    t.add_argument("--mnist-labels", help="IDX label file for the preset")
    t.add_argument("--digits", type=_int_list, help="digits kept as normal data")
    t.add_argument("--max-per-digit", type=int)
    t.add_argument("--latent-dim", type=int, default=2)
    t.add_argument("--standardize", action="store_true")
    t.add_argument("--epochs", type=int, default=2000)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--optimizer", default="adam", choices=["adam", "sgd"])
    t.add_argument("--full-batch", action="store_true")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--checkpoint-every", type=int, default=0)
    t.add_argument("--checkpoint-dir")
    t.add_argument("--config", help="JSON TrainConfig overriding the flags above")
    t.add_argument("-o", "--output", required=True, help="model JSON path")
    t.add_argument("--report", help="training report JSON path")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("score", help="score a dataset with a model")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--has-header", action="store_true")
    s.add_argument("--convention", default="mean", choices=["mean", "sum"])
    s.add_argument("--baseline", help="train-score CSV; flags rows at or below its minimum")
    s.add_argument("-o", "--output", required=True, help="score CSV path")
    s.set_defaults(func=cmd_score)

    a = sub.add_parser("audit", help="scan a loss grid and extract blind spots")
    a.add_argument("--model", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--has-header", action="store_true")
    a.add_argument("--space", default="auto", choices=["auto", "input", "latent"])
    a.add_argument("--bounds", type=_float_list, help="xmin,xmax,ymin,ymax")
    a.add_argument("--resolution", type=_int_list, default=[200, 200])
    a.add_argument("--epsilon", type=float, default=0.1)
    a.add_argument("--far-threshold", type=float)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("-o", "--output", required=True, help="output directory")
    a.set_defaults(func=cmd_audit)

    k = sub.add_parser("attack", help="construct or search for an adversarial anomaly")
    k.add_argument("--model", required=True)
    k.add_argument("--data", required=True, help="training CSV (distance + criterion basis)")
    k.add_argument("--has-header", action="store_true")
    k.add_argument("--method", required=True, choices=["analytic", "pgd", "latent"])
    k.add_argument("--delta", type=float, default=10.0)
    k.add_argument("--z", type=_float_list, help="latent point for --method latent")
    k.add_argument("--steps", type=int, default=500)
    k.add_argument("--step-size", type=float, default=1e-2)
    k.add_argument("--restarts", type=int, default=10)
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("-o", "--output", required=True, help="result JSON path")
    k.add_argument("--pgm", help="also dump the adversary as a PGM image")
    k.set_defaults(func=cmd_attack)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (AeauditError, FileNotFoundError, json.JSONDecodeError) as exc:
        _say(f"error: {exc}")
        return EXIT_USAGE
    except Exception as exc:  # pragma: no cover - internal failure path
        _say(f"internal error: {type(exc).__name__}: {exc}")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
