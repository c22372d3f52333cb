"""Config-driven experiment pipeline: generate, kg-train, train, eval, grid, report.

The config file is the source of truth; flags override config keys.  Every
artifact is stamped with the resolved config hash and its seeds, and completed
grid runs are skipped on rerun when their stamp matches.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__, evaluate, kgembed, synthgen
from .corpus import Dataset, disturbing_ratio, noise_ratio, read_dataset, write_dataset
from .train import TrainConfig, load_checkpoint, save_checkpoint, train_model

# the nine supported noise patterns, row-major over (NR, DR)
NOISE_PATTERNS = [
    ("1/3", "0"), ("1/2", "0"), ("2/3", "0"),
    ("1/3", "1/2"), ("1/2", "1/2"), ("2/3", "1/2"),
    ("1/3", "1"), ("1/2", "1"), ("2/3", "1"),
]

# model shorthand -> (aggregator, use_ce, loss_mode, kg variant)
MODEL_SPECS = {
    "bre": ("mean", False, "sentence", "none"),
    "att": ("att", False, "bag", "none"),
    "ka": ("ka", False, "bag", "real"),
    "ka_rand": ("ka", False, "bag", "random"),
    "gate": ("gate", False, "bag", "none"),
    "ce": ("mean", True, "sentence", "real"),
}


def default_config() -> dict:
    return {
        "seed": 29,
        "corpus": {
            "k_relations": 16,
            "pairs_per_relation": 84,
            "template_count": 4,
            # nonzero ambiguity keeps context informative but imperfect, so the
            # attention pathway neither saturates nor collapses on this corpus
            "ambiguity": 0.25,
        },
        # the oversized dev split keeps best-on-dev checkpoint selection
        # low-variance; 192 test pairs still resolve bag-level accuracy finely
        "split": {"train": "4/7", "test": "1/7", "dev": "2/7"},
        "kg": {
            "distractor_ratio": 0.0,
            "dim": 32,
            "margin": 1.0,
            "learning_rate": 0.05,
            "epochs": 150,
            "negatives": 1,
            "norm": 2,
        },
        "model": {
            "embed_dim": 32,
            "learning_rate": 0.01,
            "epochs": 40,
            "batch_size": 16,
            "dev_every": 5,
        },
        "grid": {
            "seeds": [1, 2, 3],
            "noise_grid_models": ["att"],
            "noise_grid": NOISE_PATTERNS,
            "table_models": ["bre", "att", "ka", "gate", "ce"],
            "table_train_sets": [["1/2", "0"], ["1/2", "1/2"], ["1/2", "1"]],
            "ka_random_train_sets": [["1/2", "0"]],
            "fixed_alphas": [0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
            "fixed_alpha_train_set": ["1/2", "0"],
            "subset_fractions": [0.02, 0.1, 0.2],
            "subset_train_set": ["1/2", "1/2"],
            "subset_models": ["att", "ce"],
        },
    }


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path: str | None, seed: int | None = None) -> dict:
    config = default_config()
    if path is not None:
        config = _merge(config, json.loads(Path(path).read_text(encoding="utf-8")))
    if seed is not None:
        config["seed"] = seed
    return config


def config_hash(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


def _frac_slug(text: str) -> str:
    return text.replace("/", "-")


@dataclass(frozen=True)
class RunSpec:
    """One trained model: a grid cell at one seed."""

    model: str
    nr: str
    dr: str
    seed: int
    subset: float | None = None
    fixed_alpha: float | None = None

    @property
    def run_id(self) -> str:
        parts = [self.model, f"nr{_frac_slug(self.nr)}", f"dr{_frac_slug(self.dr)}"]
        if self.subset is not None:
            parts.append(f"sub{self.subset:g}")
        if self.fixed_alpha is not None:
            parts.append(f"alpha{self.fixed_alpha:g}")
        parts.append(f"s{self.seed}")
        return "_".join(parts)

    @property
    def kg_variant(self) -> str:
        return MODEL_SPECS[self.model][3]


def build_runs(config: dict) -> list[RunSpec]:
    """Materialize the grid; duplicate cells collapse onto one run id."""
    grid = config["grid"]
    runs: dict[str, RunSpec] = {}

    def add(spec: RunSpec):
        runs.setdefault(spec.run_id, spec)

    for seed in grid["seeds"]:
        for model in grid["noise_grid_models"]:
            for nr, dr in grid["noise_grid"]:
                add(RunSpec(model, nr, dr, seed))
        for model in grid["table_models"]:
            for nr, dr in grid["table_train_sets"]:
                add(RunSpec(model, nr, dr, seed))
        for nr, dr in grid["ka_random_train_sets"]:
            add(RunSpec("ka_rand", nr, dr, seed))
        nr, dr = grid["fixed_alpha_train_set"]
        for alpha in grid["fixed_alphas"]:
            add(RunSpec("att", nr, dr, seed, fixed_alpha=alpha))
        nr, dr = grid["subset_train_set"]
        for model in grid["subset_models"]:
            for fraction in grid["subset_fractions"]:
                add(RunSpec(model, nr, dr, seed, subset=fraction))
    return [runs[k] for k in sorted(runs)]


def _needed_patterns(runs: list[RunSpec]) -> list[tuple[str, str]]:
    return sorted({(r.nr, r.dr) for r in runs})


def _pattern_seed(master: int, nr: str, dr: str) -> int:
    """Training-set seed derived from the pattern itself, so the same (NR, DR)
    file is byte-identical no matter which subset of patterns an invocation
    generates."""
    digest = hashlib.sha256(f"{nr}|{dr}".encode()).digest()
    return master + 10 + int.from_bytes(digest[:4], "big")


def train_set_path(out_dir: Path, nr: str, dr: str) -> Path:
    return out_dir / "datasets" / f"train_nr{_frac_slug(nr)}_dr{_frac_slug(dr)}.jsonl"


def generate_stage(config: dict, out_dir: Path, patterns=None) -> dict:
    """Seed corpus, splits, noise-pattern train sets, eval sets, and both KGs."""
    cfg_hash = config_hash(config)
    ds_dir = out_dir / "datasets"
    kg_dir = out_dir / "kg"
    stamp_path = out_dir / "provenance.json"
    if patterns is None:
        patterns = NOISE_PATTERNS
    if stamp_path.exists():
        stamp = json.loads(stamp_path.read_text(encoding="utf-8"))
        if stamp.get("config_hash") == cfg_hash and all(
            train_set_path(out_dir, nr, dr).exists() for nr, dr in patterns
        ):
            return stamp

    seed = config["seed"]
    corpus_cfg = config["corpus"]
    seed_corpus = synthgen.generate_seed_corpus(
        k_relations=corpus_cfg["k_relations"],
        pairs_per_relation=corpus_cfg["pairs_per_relation"],
        template_count=corpus_cfg["template_count"],
        ambiguity=corpus_cfg["ambiguity"],
        rng_seed=seed,
    )
    split_cfg = config["split"]
    parts = synthgen.split_seed(
        seed_corpus,
        synthgen.SplitSpec(
            train=Fraction(split_cfg["train"]),
            test=Fraction(split_cfg["test"]),
            dev=Fraction(split_cfg["dev"]),
            rng_seed=seed + 1,
        ),
    )

    ds_dir.mkdir(parents=True, exist_ok=True)
    kg_dir.mkdir(parents=True, exist_ok=True)
    stats = {}
    for nr, dr in patterns:
        plan = synthgen.plan_pattern(nr, dr, len(parts["train"].sentences))
        dataset = synthgen.build_training_set(
            parts["train"], plan, rng_seed=_pattern_seed(seed, nr, dr))
        write_dataset(dataset, train_set_path(out_dir, nr, dr))
        stats[f"train_nr{nr}_dr{dr}"] = {
            "bags": len(dataset.bags),
            "nr": str(noise_ratio(dataset)),
            "dr": str(disturbing_ratio(dataset)),
        }
    for tag, offset in (("dev", 100), ("test", 101)):
        dataset = synthgen.build_eval_set(parts[tag], rng_seed=seed + offset, split_tag=tag)
        write_dataset(dataset, ds_dir / f"{tag}.jsonl")
        stats[tag] = {
            "bags": len(dataset.bags),
            "nr": str(noise_ratio(dataset)),
            "dr": str(disturbing_ratio(dataset)),
        }

    kg = synthgen.build_kg(seed_corpus, config["kg"]["distractor_ratio"], rng_seed=seed + 2)
    kgembed.write_kg(kg, kg_dir / "kg.txt")
    kgembed.write_kg(synthgen.randomize_kg(kg, rng_seed=seed + 3), kg_dir / "kg_random.txt")

    stamp = {
        "config_hash": cfg_hash,
        "version": __version__,
        "seed": seed,
        "config": config,
        "datasets": stats,
    }
    stamp_path.write_text(json.dumps(stamp, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return stamp


def kg_train_stage(config: dict, out_dir: Path) -> None:
    """TransE tables for the real and the relation-randomized KG."""
    kg_dir = out_dir / "kg"
    kg_cfg = config["kg"]
    for name, seed_offset in (("", 4), ("_random", 5)):
        target = kg_dir / f"transe{name}.npz"
        if target.exists():
            continue
        kg = kgembed.read_kg(kg_dir / f"kg{name}.txt")
        cfg = kgembed.TransEConfig(
            dim=kg_cfg["dim"],
            margin=kg_cfg["margin"],
            learning_rate=kg_cfg["learning_rate"],
            epochs=kg_cfg["epochs"],
            negatives=kg_cfg["negatives"],
            norm=kg_cfg["norm"],
            rng_seed=config["seed"] + seed_offset,
        )
        kgembed.save_embeddings(kgembed.train_transe(kg, cfg), target)


def execute_run(spec: RunSpec, config: dict, out_dir: Path) -> dict:
    """Train and evaluate one run; returns its results row."""
    cfg_hash = config_hash(config)
    run_dir = out_dir / "runs" / spec.run_id
    report_path = run_dir / "report.json"
    if report_path.exists():
        report = json.loads(report_path.read_text(encoding="utf-8"))
        if report.get("config_hash") == cfg_hash:
            report["skipped"] = True
            return report

    aggregator, use_ce, loss_mode, kg_variant = MODEL_SPECS[spec.model]
    train_data = read_dataset(train_set_path(out_dir, spec.nr, spec.dr))
    if spec.subset is not None:
        # one shared permutation seed so every model sees the same nested subsets
        train_data = synthgen.subsample_bags(train_data, spec.subset, rng_seed=config["seed"] + 7)
    dev = read_dataset(out_dir / "datasets" / "dev.jsonl")
    test = read_dataset(out_dir / "datasets" / "test.jsonl")
    kg_emb = None
    if kg_variant != "none":
        suffix = "_random" if kg_variant == "random" else ""
        kg_emb = kgembed.load_embeddings(out_dir / "kg" / f"transe{suffix}.npz")

    model_cfg = config["model"]
    cfg = TrainConfig(
        aggregator=aggregator,
        use_ce=use_ce,
        loss_mode=loss_mode,
        fixed_alpha=spec.fixed_alpha,
        embed_dim=model_cfg["embed_dim"],
        learning_rate=model_cfg["learning_rate"],
        epochs=model_cfg["epochs"],
        batch_size=model_cfg["batch_size"],
        dev_every=model_cfg["dev_every"],
        rng_seed=spec.seed,
    )
    ckpt = train_model(train_data, dev, cfg, kg_emb)
    report_data = evaluate.evaluate_model(ckpt, test)

    run_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt, run_dir / "checkpoint.npz")
    with open(run_dir / "curve.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "dev_auc"])
        for row in ckpt.history:
            writer.writerow([row.epoch, f"{row.loss:.12g}",
                             "" if row.dev_auc is None else f"{row.dev_auc:.12g}"])
    for name, curve in report_data.curves.items():
        evaluate.export_pr_curve(curve, run_dir / f"pr_{name}.csv")
    records = evaluate.predict_records(ckpt.params, ckpt.kind, test)
    if ckpt.kind.has_attention:
        evaluate.export_attention_traces(records, run_dir / "attention_trace.csv")

    report = {
        "run_id": spec.run_id,
        "model": spec.model,
        "aggregator": aggregator,
        "use_ce": use_ce,
        "loss_mode": loss_mode,
        "kg": kg_variant,
        "train_nr": spec.nr,
        "train_dr": spec.dr,
        "subset": spec.subset,
        "fixed_alpha": spec.fixed_alpha,
        "seed": spec.seed,
        "config_hash": cfg_hash,
        "status": "ok",
        **report_data.to_dict(),
    }
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return report


def _worker(args) -> dict:
    spec, config, out_dir = args
    try:
        return execute_run(spec, config, Path(out_dir))
    except Exception as exc:  # recorded per run; the grid keeps going
        return {
            "run_id": spec.run_id,
            "model": spec.model,
            "train_nr": spec.nr,
            "train_dr": spec.dr,
            "subset": spec.subset,
            "fixed_alpha": spec.fixed_alpha,
            "seed": spec.seed,
            "status": f"failed: {exc}",
        }


RESULT_COLUMNS = [
    "run_id", "model", "aggregator", "use_ce", "loss_mode", "kg",
    "train_nr", "train_dr", "subset", "fixed_alpha", "seed",
    "auc", "aacc", "auc_valid", "auc_noisy", "status", "config_hash",
]


def write_results(rows: list[dict], out_dir: Path) -> Path:
    path = out_dir / "results.csv"
    rows = sorted(rows, key=lambda r: r["run_id"])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_COLUMNS)
        for row in rows:
            out = []
            for col in RESULT_COLUMNS:
                value = row.get(col)
                if value is None:
                    out.append("")
                elif isinstance(value, float):
                    out.append(f"{value:.6f}")
                else:
                    out.append(str(value))
            writer.writerow(out)
    return path


def run_pipeline(config: dict, out_dir: str | Path, workers: int = 1,
                 cell_filter: str | None = None, plots: bool = False) -> tuple[Path, int]:
    """Full grid; returns the results directory and the number of failed runs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    runs = build_runs(config)
    if cell_filter:
        runs = [r for r in runs if cell_filter in r.run_id]
        if not runs:
            raise SystemExit(f"no grid cells match filter {cell_filter!r}")
    generate_stage(config, out_dir, patterns=_needed_patterns(runs))
    if any(r.kg_variant != "none" for r in runs):
        kg_train_stage(config, out_dir)

    jobs = [(spec, config, str(out_dir)) for spec in runs]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_worker, jobs))
    else:
        rows = [_worker(job) for job in jobs]

    for row in rows:
        status = row.get("status", "failed: no report")
        marker = "done" if status == "ok" else status
        if row.pop("skipped", False):
            marker = "skipped (up to date)"
        print(f"[{marker}] {row['run_id']}", flush=True)

    write_results(rows, out_dir)
    emit_tables(out_dir)
    if plots:
        write_plots(out_dir)
    failures = sum(1 for row in rows if row.get("status") != "ok")
    return out_dir, failures


def _load_rows(out_dir: Path) -> list[dict]:
    path = out_dir / "results.csv"
    if not path.exists():
        raise SystemExit(f"{path} not found; run the grid first")
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _mean_std(values: list[float]) -> str:
    if not values:
        return "—"
    mean = float(np.mean(values))
    std = float(np.std(values)) if len(values) > 1 else 0.0
    return f"{mean:.3f} ± {std:.3f}"


def _collect(rows, metric, **match) -> list[float]:
    out = []
    for row in rows:
        if row["status"] != "ok":
            continue
        if all(str(row[k]) == str(v) for k, v in match.items()):
            if row[metric]:
                out.append(float(row[metric]))
    return out


def emit_tables(out_dir: Path) -> Path:
    """Markdown summary tables grouped like the standard ablation layouts."""
    rows = _load_rows(out_dir)
    tables_dir = out_dir / "tables"
    tables_dir.mkdir(exist_ok=True)
    seeds = sorted({row["seed"] for row in rows})
    hashes = sorted({row["config_hash"] for row in rows if row["config_hash"]})
    footer = f"\nseeds: {', '.join(seeds)}; config hash: {', '.join(hashes)}\n"

    plain = [r for r in rows if not r["subset"] and not r["fixed_alpha"]]

    lines = ["# Attention accuracy by noise pattern (att)", ""]
    nrs = sorted({r["train_nr"] for r in plain}, key=Fraction)
    drs = sorted({r["train_dr"] for r in plain}, key=Fraction)
    lines.append("| DR \\ NR | " + " | ".join(nrs) + " |")
    lines.append("|---" * (len(nrs) + 1) + "|")
    for dr in drs:
        cells = [
            _mean_std(_collect(plain, "aacc", model="att", train_nr=nr, train_dr=dr))
            for nr in nrs
        ]
        lines.append(f"| {dr} | " + " | ".join(cells) + " |")
    (tables_dir / "aacc_grid.md").write_text("\n".join(lines) + footer, encoding="utf-8")

    lines = ["# Model comparison", ""]
    lines.append("| model | train NR | train DR | AUC | AAcc | AUCV | AUCN |")
    lines.append("|---|---|---|---|---|---|---|")
    combos = sorted(
        {(r["model"], r["train_nr"], r["train_dr"]) for r in plain},
        key=lambda c: (c[0], Fraction(c[1]), Fraction(c[2])),
    )
    for model, nr, dr in combos:
        match = dict(model=model, train_nr=nr, train_dr=dr)
        lines.append(
            f"| {model} | {nr} | {dr} | "
            + " | ".join(
                _mean_std(_collect(plain, metric, **match))
                for metric in ("auc", "aacc", "auc_valid", "auc_noisy")
            )
            + " |"
        )
    (tables_dir / "models.md").write_text("\n".join(lines) + footer, encoding="utf-8")

    sweep = [r for r in rows if r["fixed_alpha"]]
    lines = ["# Fixed attention-weight sweep", "", "| alpha | AUC | AUCV | AUCN |", "|---|---|---|---|"]
    for alpha in sorted({float(r["fixed_alpha"]) for r in sweep}):
        match = dict(fixed_alpha=f"{alpha:.6f}")
        lines.append(
            f"| {alpha:g} | "
            + " | ".join(
                _mean_std(_collect(sweep, metric, **match))
                for metric in ("auc", "auc_valid", "auc_noisy")
            )
            + " |"
        )
    (tables_dir / "sweep.md").write_text("\n".join(lines) + footer, encoding="utf-8")

    subs = [r for r in rows if r["subset"]]
    models = sorted({r["model"] for r in subs})
    lines = ["# Training-subset sparsity", "", "| fraction | " + " | ".join(models) + " |",
             "|---" * (len(models) + 1) + "|"]
    for fraction in sorted({float(r["subset"]) for r in subs}):
        cells = [
            _mean_std(_collect(subs, "auc", model=m, subset=f"{fraction:.6f}"))
            for m in models
        ]
        lines.append(f"| {fraction:g} | " + " | ".join(cells) + " |")
    (tables_dir / "subsets.md").write_text("\n".join(lines) + footer, encoding="utf-8")
    return tables_dir


def write_plots(out_dir: Path) -> Path:
    """Static SVG plots of the grid trends."""
    import matplotlib

    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    rows = _load_rows(out_dir)
    plots_dir = out_dir / "plots"
    plots_dir.mkdir(exist_ok=True)
    plain = [r for r in rows if not r["subset"] and not r["fixed_alpha"]]

    fig, ax = plt.subplots(figsize=(5, 3.2))
    nrs = sorted({r["train_nr"] for r in plain}, key=Fraction)
    drs = sorted({r["train_dr"] for r in plain}, key=Fraction)
    width = 0.8 / max(1, len(drs))
    for j, dr in enumerate(drs):
        means = [
            np.mean(v) if (v := _collect(plain, "aacc", model="att", train_nr=nr, train_dr=dr)) else np.nan
            for nr in nrs
        ]
        ax.bar(np.arange(len(nrs)) + j * width, means, width, label=f"DR={dr}")
    ax.set_xticks(np.arange(len(nrs)) + 0.4 - width / 2, [f"NR={nr}" for nr in nrs])
    ax.set_ylabel("attention accuracy")
    ax.legend()
    fig.tight_layout()
    fig.savefig(plots_dir / "aacc_grid.svg")
    plt.close(fig)

    sweep = [r for r in rows if r["fixed_alpha"]]
    if sweep:
        fig, ax = plt.subplots(figsize=(5, 3.2))
        alphas = sorted({float(r["fixed_alpha"]) for r in sweep})
        for metric, label in (("auc_valid", "AUCV"), ("auc_noisy", "AUCN"), ("auc", "AUC")):
            means = [
                np.mean(_collect(sweep, metric, fixed_alpha=f"{a:.6f}")) for a in alphas
            ]
            ax.plot(alphas, means, marker="o", label=label)
        ax.set_xlabel("fixed weight on the valid sentence")
        ax.set_ylabel("PR-AUC")
        ax.legend()
        fig.tight_layout()
        fig.savefig(plots_dir / "fixed_weight_sweep.svg")
        plt.close(fig)

    subs = [r for r in rows if r["subset"]]
    if subs:
        fig, ax = plt.subplots(figsize=(5, 3.2))
        for model in sorted({r["model"] for r in subs}):
            fractions = sorted({float(r["subset"]) for r in subs})
            means = [
                np.mean(_collect(subs, "auc", model=model, subset=f"{f:.6f}"))
                for f in fractions
            ]
            ax.plot(fractions, means, marker="o", label=model)
        ax.set_xlabel("training subset fraction")
        ax.set_ylabel("PR-AUC")
        ax.legend()
        fig.tight_layout()
        fig.savefig(plots_dir / "subsets.svg")
        plt.close(fig)
    return plots_dir


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="baglab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file; defaults apply underneath")
        p.add_argument("--out-dir", default="results")
        p.add_argument("--seed", type=int, help="override the master seed")

    p = sub.add_parser("generate", help="seed corpus, noise-pattern datasets, and KGs")
    common(p)

    p = sub.add_parser("kg-train", help="train TransE tables for both KGs")
    common(p)

    p = sub.add_parser("train", help="train one grid cell")
    common(p)
    p.add_argument("--model", required=True, choices=sorted(MODEL_SPECS))
    p.add_argument("--train-set", default="1/2,0", help="NR,DR e.g. 1/2,0")
    p.add_argument("--run-seed", type=int, default=1)
    p.add_argument("--subset", type=float)
    p.add_argument("--alpha", type=float)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("grid", help="run every configured cell")
    common(p)
    p.add_argument("--cell", help="only run cells whose id contains this substring")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--plots", action="store_true")

    p = sub.add_parser("report", help="rebuild summary tables from results.csv")
    p.add_argument("--out-dir", default="results")

    args = parser.parse_args(argv)

    if args.command == "report":
        tables = emit_tables(Path(args.out_dir))
        print(f"tables written to {tables}")
        return 0

    if args.command == "eval":
        ckpt = load_checkpoint(args.checkpoint)
        test = read_dataset(args.test)
        report = evaluate.evaluate_model(ckpt, test)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        evaluate.write_report(report, out / "report.json")
        for name, curve in report.curves.items():
            evaluate.export_pr_curve(curve, out / f"pr_{name}.csv")
        records = evaluate.predict_records(ckpt.params, ckpt.kind, test)
        if ckpt.kind.has_attention:
            evaluate.export_attention_traces(records, out / "attention_trace.csv")
        print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
        return 0

    config = load_config(args.config, args.seed)
    out_dir = Path(args.out_dir)

    if args.command == "generate":
        stamp = generate_stage(config, out_dir)
        print(json.dumps(stamp["datasets"], indent=2, sort_keys=True))
        return 0

    if args.command == "kg-train":
        generate_stage(config, out_dir)
        kg_train_stage(config, out_dir)
        print(f"embeddings written to {out_dir / 'kg'}")
        return 0

    if args.command == "train":
        nr, dr = args.train_set.split(",")
        spec = RunSpec(args.model, nr, dr, args.run_seed,
                       subset=args.subset, fixed_alpha=args.alpha)
        generate_stage(config, out_dir, patterns=[(nr, dr)])
        if spec.kg_variant != "none":
            kg_train_stage(config, out_dir)
        report = execute_run(spec, config, out_dir)
        print(json.dumps(report, indent=2, sort_keys=True))
        return 0 if report.get("status") == "ok" else 1

    _, failures = run_pipeline(config, out_dir, workers=args.workers,
                               cell_filter=args.cell, plots=args.plots)
    if failures:
        print(f"{failures} runs failed", file=sys.stderr)
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
