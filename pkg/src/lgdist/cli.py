"""Command-line entry point: synth, preprocess, train-ae, train-diffusion,
complete, evaluate, robustness, plot.

Every subcommand leaves a manifest.json in its output directory with the
resolved config, seeds, and input/output digests; reruns with identical
inputs produce byte-identical artifacts. Errors derived from LgdistError are
reported as a JSON record on stderr with exit code 1; argparse handles usage
errors with exit code 2.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from lgdist import __version__
from lgdist.autoencoder import AutoencoderConfig, load_autoencoder, panel_digest, train_autoencoder
from lgdist.config import dataclass_from_dict, load_config_file, section
from lgdist.data import (
    load_dataset,
    load_ground_truth,
    save_dataset,
    write_genes_csv,
)
from lgdist.diffusion import (
    DiffusionConfig,
    complete_slide,
    load_denoiser,
    train_diffusion,
)
from lgdist.errors import CheckpointError, ConfigError, LgdistError
from lgdist.evaluation import (
    apply_simulation,
    compute_metrics,
    make_diffusion_completer,
    median_completer,
    robustness_sweep,
    score_completion,
    simulate_dropout,
)
from lgdist.manifest import file_digest, write_manifest
from lgdist.plots import comparison_panels_svg, expression_map_svg, scatter_svg, sweep_line_svg
from lgdist.preprocess import build_gene_panel, median_precomplete, reorder_slide_to_panel
from lgdist.synthetic import SynthConfig, generate_dataset


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow([format(v, ".10g") if isinstance(v, float) else v for v in row])


def _parse_int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x != ""]


def _parse_float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x != ""]


def _eval_slide(slides, splits, requested):
    if requested:
        if requested not in slides:
            raise ConfigError(f"slide {requested!r} not in dataset")
        return slides[requested]
    for pool in (splits.test, splits.val, splits.train):
        if pool:
            return slides[pool[0]]
    raise ConfigError("dataset has no slides")


def _load_models(args, panel):
    denoiser = load_denoiser(args.dit_ckpt)
    ae = None
    if denoiser.cfg.use_latent:
        if not args.ae_ckpt:
            raise CheckpointError("this denoiser needs --ae-ckpt")
        ae, _ = load_autoencoder(args.ae_ckpt)
    if denoiser.meta.get("panel_digest") and denoiser.meta["panel_digest"] != panel_digest(panel):
        raise CheckpointError("denoiser checkpoint was trained on a different gene panel")
    return denoiser, ae


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg_file = load_config_file(args.config)
    synth_cfg = dataclass_from_dict(SynthConfig, section(cfg_file, "synth"), seed=args.seed)
    out = Path(args.out)
    slides, panel, splits, truth = generate_dataset(synth_cfg)
    save_dataset(out, slides, panel, splits, name=synth_cfg.name, ground_truth=truth)
    write_manifest(
        out, "synth", asdict(synth_cfg), seeds=[synth_cfg.seed],
        inputs={}, outputs=["metadata.json", "genes.csv", "splits.json", "slides"],
    )
    print(f"synth: wrote {len(slides)} slides, {panel.gene_count} genes to {out}")
    return 0


def cmd_preprocess(args) -> int:
    dataset_dir = Path(args.dataset)
    slides, panel, splits = load_dataset(dataset_dir)
    meta = json.loads((dataset_dir / "metadata.json").read_text())
    hsag_count = args.hsag_count or meta["hsag_count"]
    total = args.total_genes or panel.gene_count
    ranked = build_gene_panel(slides, panel.gene_names, splits.train, hsag_count, total)
    reordered = {
        sid: median_precomplete(reorder_slide_to_panel(s, panel.gene_names, ranked))
        for sid, s in sorted(slides.items())
    }
    truths = {}
    name_to_old = {n: i for i, n in enumerate(panel.gene_names)}
    order = np.asarray([name_to_old[n] for n in ranked.gene_names])
    for sid, s in slides.items():
        gt_path = dataset_dir / "slides" / sid / "ground_truth.f32"
        if gt_path.exists():
            truths[sid] = load_ground_truth(dataset_dir, sid, (s.n_spots, panel.gene_count))[:, order]

    out = Path(args.out) if args.out else dataset_dir
    save_dataset(out, reordered, ranked, splits, name=meta.get("name", "dataset"), ground_truth=truths)
    write_manifest(
        out, "preprocess",
        {"hsag_count": hsag_count, "total_genes": total},
        seeds=[],
        inputs={} if out == dataset_dir else {"dataset": dataset_dir},
        outputs=["genes.csv", "slides"],
    )
    print(f"preprocess: panel of {ranked.gene_count} genes ({ranked.hsag_count} HSAGs) -> {out}")
    return 0


def cmd_train_ae(args) -> int:
    slides, panel, splits = load_dataset(args.dataset)
    cfg_file = load_config_file(args.config)
    sec = dict(section(cfg_file, "ae"))
    sec.setdefault("gene_count", panel.gene_count)
    ae_cfg = dataclass_from_dict(AutoencoderConfig, sec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "ae.ckpt"
    _, history = train_autoencoder(slides, panel, splits, ae_cfg, args.seed, out_path=ckpt)
    _write_csv(
        out / "ae_trainlog.csv",
        ["epoch", "train_loss", "val_loss", "l_hsag", "l_cg"],
        [[r["epoch"], r["train_loss"], r["val_loss"], r["l_hsag"], r["l_cg"]] for r in history],
    )
    write_manifest(
        out, "train-ae", asdict(ae_cfg), seeds=[args.seed],
        inputs={"dataset": args.dataset}, outputs=["ae.ckpt", "ae_trainlog.csv"],
    )
    print(f"train-ae: {len(history)} epochs, final val {history[-1]['val_loss']:.6g} -> {ckpt}")
    return 0


def cmd_train_diffusion(args) -> int:
    slides, panel, splits = load_dataset(args.dataset)
    cfg_file = load_config_file(args.config)
    sec = dict(section(cfg_file, "dit"))
    if args.no_latent:
        sec["use_latent"] = False
    dit_cfg = dataclass_from_dict(DiffusionConfig, sec)
    ae = None
    ae_digest = ""
    if dit_cfg.use_latent:
        if not args.ae_ckpt:
            raise CheckpointError("latent diffusion needs --ae-ckpt (or pass --no-latent)")
        ae, ae_meta = load_autoencoder(args.ae_ckpt)
        if ae_meta.get("panel_digest") != panel_digest(panel):
            raise CheckpointError("autoencoder checkpoint was trained on a different gene panel")
        ae_digest = file_digest(args.ae_ckpt)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "dit.ckpt"
    _, history = train_diffusion(
        slides, panel, splits, dit_cfg, args.seed, ae_model=ae, out_path=ckpt, ae_digest=ae_digest
    )
    _write_csv(
        out / "dit_trainlog.csv",
        ["epoch", "train_loss", "val_loss"],
        [[r["epoch"], r["train_loss"], r["val_loss"]] for r in history],
    )
    inputs = {"dataset": args.dataset}
    if args.ae_ckpt:
        inputs["ae_ckpt"] = args.ae_ckpt
    write_manifest(
        out, "train-diffusion", asdict(dit_cfg), seeds=[args.seed],
        inputs=inputs, outputs=["dit.ckpt", "dit_trainlog.csv"],
    )
    print(f"train-diffusion: {len(history)} epochs, final val {history[-1]['val_loss']:.6g} -> {ckpt}")
    return 0


def _targets_for(slide, spec_path):
    if spec_path == "dropout":
        return np.argwhere(slide.observed_mask == 0).astype(np.int64)
    raw = json.loads(Path(spec_path).read_text())
    entries = raw.get(slide.slide_id, [])
    return np.asarray(entries, dtype=np.int64).reshape(-1, 2)


def cmd_complete(args) -> int:
    slides, panel, splits = load_dataset(args.dataset)
    denoiser, ae = _load_models(args, panel)
    out = Path(args.out)
    per_slide = {}
    for sid in sorted(slides):
        slide = slides[sid]
        targets = _targets_for(slide, args.targets)
        result = complete_slide(
            slide, panel, denoiser, ae, targets, seed=args.seed, keep_cgs=args.keep_cgs
        )
        sdir = out / "slides" / sid
        sdir.mkdir(parents=True, exist_ok=True)
        np.ascontiguousarray(result.expression, dtype="<f4").tofile(sdir / "expression_completed.f32")
        per_slide[sid] = {
            "n_filled": int(targets.shape[0]),
            "filled_entries": targets.tolist(),
            "columns": list(result.gene_names),
        }
    completion_manifest = {
        "seed": args.seed,
        "keep_cgs": bool(args.keep_cgs),
        "targets": args.targets,
        "ae_ckpt_digest": file_digest(args.ae_ckpt) if args.ae_ckpt else None,
        "dit_ckpt_digest": file_digest(args.dit_ckpt),
        "schedule_digest": denoiser.schedule().digest(),
        "slides": per_slide,
    }
    (out / "completion_manifest.json").write_text(
        json.dumps(completion_manifest, indent=2, sort_keys=True) + "\n"
    )
    inputs = {"dataset": args.dataset, "dit_ckpt": args.dit_ckpt}
    if args.ae_ckpt:
        inputs["ae_ckpt"] = args.ae_ckpt
    if args.targets != "dropout":
        inputs["targets"] = args.targets
    write_manifest(
        out, "complete", {"keep_cgs": bool(args.keep_cgs), "targets": args.targets},
        seeds=[args.seed], inputs=inputs, outputs=["completion_manifest.json", "slides"],
    )
    total = sum(v["n_filled"] for v in per_slide.values())
    print(f"complete: filled {total} entries across {len(per_slide)} slides -> {out}")
    return 0


def cmd_evaluate(args) -> int:
    slides, panel, splits = load_dataset(args.dataset)
    denoiser, ae = _load_models(args, panel)
    slide = _eval_slide(slides, splits, args.slide)
    seeds = _parse_int_list(args.seeds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    reports = []
    first_artifacts = None
    for seed in seeds:
        mask = simulate_dropout(slide, panel, args.fraction, seed, args.scope)
        corrupted = apply_simulation(slide, mask)
        completer = make_diffusion_completer(denoiser, ae, seed=seed)
        predicted = completer(corrupted, panel, mask.entries)
        reports.append(compute_metrics(slide.expression, predicted, mask.entries))
        if first_artifacts is None:
            first_artifacts = (mask, predicted)

    metrics = {
        "slide": slide.slide_id,
        "fraction": args.fraction,
        "gene_scope": args.scope,
        "seeds": seeds,
        "mse_mean": float(np.mean([r.mse for r in reports])),
        "mse_std": float(np.std([r.mse for r in reports])),
        "per_seed": [
            {"seed": s, "mse": r.mse, "pcc": r.pcc, "n_entries": r.n_entries}
            for s, r in zip(seeds, reports)
        ],
        "per_gene_seed0": {
            panel.gene_names[g]: v for g, v in sorted(reports[0].per_gene.items())
        },
    }
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")

    mask, predicted = first_artifacts
    gene = 0  # top-ranked HSAG
    hidden = np.zeros(slide.n_spots, dtype=bool)
    hidden[mask.entries[mask.entries[:, 1] == gene, 0]] = True
    panels = [
        ("ground truth", slide.expression[:, gene]),
        ("masked", slide.expression[:, gene]),
        ("completed", predicted[:, gene]),
    ]
    (out / "expression_map.svg").write_text(
        comparison_panels_svg(slide.coords, panels, hidden_by_panel={1: hidden})
    )
    rows, cols = mask.entries[:, 0], mask.entries[:, 1]
    truth_vals = slide.expression[rows, cols]
    pred_vals = predicted[rows, cols]
    (out / "scatter.svg").write_text(
        scatter_svg(truth_vals, pred_vals, title=f"completed vs truth ({slide.slide_id})")
    )
    _write_csv(
        out / "eval_pairs.csv",
        ["spot", "gene", "truth", "predicted"],
        [
            [int(r), int(c), float(t), float(p)]
            for r, c, t, p in zip(rows, cols, truth_vals, pred_vals)
        ],
    )
    inputs = {"dataset": args.dataset, "dit_ckpt": args.dit_ckpt}
    if args.ae_ckpt:
        inputs["ae_ckpt"] = args.ae_ckpt
    write_manifest(
        out, "evaluate",
        {"fraction": args.fraction, "scope": args.scope, "slide": slide.slide_id},
        seeds=seeds, inputs=inputs,
        outputs=["metrics.json", "expression_map.svg", "scatter.svg", "eval_pairs.csv"],
    )
    print(f"evaluate: mse {metrics['mse_mean']:.6g} +- {metrics['mse_std']:.3g} -> {out}")
    return 0


def cmd_robustness(args) -> int:
    slides, panel, splits = load_dataset(args.dataset)
    denoiser, ae = _load_models(args, panel)
    slide = _eval_slide(slides, splits, args.slide)
    seeds = _parse_int_list(args.seeds)
    fractions = _parse_float_list(args.fractions)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    series = {}
    series["model"] = robustness_sweep(
        slide, panel, make_diffusion_completer(denoiser, ae, seed=seeds[0]),
        fractions, seeds, args.scope,
    )
    if not args.no_baseline:
        series["median"] = robustness_sweep(slide, panel, median_completer, fractions, seeds, args.scope)

    rows = []
    for name, sweep in series.items():
        for r in sweep:
            rows.append([name, r["fraction"], r["mean_mse"], r["std_mse"], len(r["mses"])])
    _write_csv(out / "sweep.csv", ["completer", "fraction", "mean_mse", "std_mse", "n_seeds"], rows)
    (out / "sweep.svg").write_text(sweep_line_svg(series, title=f"masked-entry MSE ({slide.slide_id})"))
    inputs = {"dataset": args.dataset, "dit_ckpt": args.dit_ckpt}
    if args.ae_ckpt:
        inputs["ae_ckpt"] = args.ae_ckpt
    write_manifest(
        out, "robustness",
        {"fractions": fractions, "scope": args.scope, "slide": slide.slide_id,
         "baseline": not args.no_baseline},
        seeds=seeds, inputs=inputs, outputs=["sweep.csv", "sweep.svg"],
    )
    print(f"robustness: {len(fractions)} fractions x {len(seeds)} seeds -> {out}")
    return 0


def cmd_plot(args) -> int:
    out = Path(args.out)
    if args.kind == "expression-map":
        slides, panel, _ = load_dataset(args.dataset)
        if args.slide not in slides:
            raise ConfigError(f"slide {args.slide!r} not in dataset")
        slide = slides[args.slide]
        if args.gene in panel.gene_names:
            gene = panel.gene_names.index(args.gene)
        else:
            try:
                gene = int(args.gene)
            except ValueError:
                raise ConfigError(f"gene {args.gene!r} not in panel") from None
        svg = expression_map_svg(
            slide.coords, slide.expression[:, gene],
            hidden=slide.observed_mask[:, gene] == 0,
            title=f"{panel.gene_names[gene]} ({args.slide})",
        )
    elif args.kind == "scatter":
        pairs = Path(args.artifact) / "eval_pairs.csv"
        if not pairs.exists():
            raise ConfigError(f"{pairs} not found; run evaluate first")
        truth, pred = [], []
        with open(pairs, newline="") as f:
            for row in csv.DictReader(f):
                truth.append(float(row["truth"]))
                pred.append(float(row["predicted"]))
        svg = scatter_svg(np.asarray(truth), np.asarray(pred), title="completed vs truth")
    elif args.kind == "sweep-line":
        sweep = Path(args.artifact) / "sweep.csv"
        if not sweep.exists():
            raise ConfigError(f"{sweep} not found; run robustness first")
        series: dict[str, list[dict]] = {}
        with open(sweep, newline="") as f:
            for row in csv.DictReader(f):
                series.setdefault(row["completer"], []).append(
                    {"fraction": float(row["fraction"]), "mean_mse": float(row["mean_mse"])}
                )
        svg = sweep_line_svg(series, title="masked-entry MSE")
    else:  # pragma: no cover - argparse restricts choices
        raise ConfigError(f"unknown plot kind {args.kind!r}")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(svg)
    print(f"plot: {args.kind} -> {out}")
    return 0


# ---------------------------------------------------------------------------
# parser / dispatch
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lgdist",
        description="Reference-free dropout completion for spatial transcriptomics",
    )
    parser.add_argument("--version", action="version", version=f"lgdist {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset directory")
    p.add_argument("--config", help="JSON config file (section: synth)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("preprocess", help="rank genes, flag HSAGs, median-precomplete")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", help="write a derived dataset here instead of in place")
    p.add_argument("--hsag-count", type=int, default=None)
    p.add_argument("--total-genes", type=int, default=None)
    p.set_defaults(fn=cmd_preprocess)

    p = sub.add_parser("train-ae", help="train the neighborhood autoencoder")
    p.add_argument("--dataset", required=True)
    p.add_argument("--config", help="JSON config file (section: ae)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train_ae)

    p = sub.add_parser("train-diffusion", help="train the latent denoiser")
    p.add_argument("--dataset", required=True)
    p.add_argument("--ae-ckpt")
    p.add_argument("--config", help="JSON config file (section: dit)")
    p.add_argument("--no-latent", action="store_true", help="diffuse raw expression rows")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train_diffusion)

    p = sub.add_parser("complete", help="fill target entries with generated values")
    p.add_argument("--dataset", required=True)
    p.add_argument("--ae-ckpt")
    p.add_argument("--dit-ckpt", required=True)
    p.add_argument("--targets", required=True, help="JSON file of per-slide entries, or 'dropout'")
    p.add_argument("--keep-cgs", action="store_true", help="retain context-gene columns")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_complete)

    p = sub.add_parser("evaluate", help="simulated-dropout metrics on one slide")
    p.add_argument("--dataset", required=True)
    p.add_argument("--ae-ckpt")
    p.add_argument("--dit-ckpt", required=True)
    p.add_argument("--fraction", type=float, default=0.3)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--scope", choices=("hsags", "all"), default="hsags")
    p.add_argument("--slide", default=None, help="defaults to the first test slide")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("robustness", help="MSE sweep over masked fractions")
    p.add_argument("--dataset", required=True)
    p.add_argument("--ae-ckpt")
    p.add_argument("--dit-ckpt", required=True)
    p.add_argument("--fractions", default="0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--scope", choices=("hsags", "all"), default="hsags")
    p.add_argument("--slide", default=None)
    p.add_argument("--no-baseline", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_robustness)

    p = sub.add_parser("plot", help="render an SVG from stored artifacts")
    p.add_argument("--kind", required=True, choices=("expression-map", "scatter", "sweep-line"))
    p.add_argument("--artifact", help="artifact directory (scatter, sweep-line)")
    p.add_argument("--dataset", help="dataset directory (expression-map)")
    p.add_argument("--slide", help="slide id (expression-map)")
    p.add_argument("--gene", default="0", help="gene name or panel index (expression-map)")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_plot)

    return parser


def dispatch(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except LgdistError as exc:
        record = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        return 1


def main(argv=None) -> None:
    sys.exit(dispatch(argv))


if __name__ == "__main__":
    main()
