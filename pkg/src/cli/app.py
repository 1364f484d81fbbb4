import argparse
import copy
import logging
import sys
from typing import List, Optional

import numpy as np
from rich.panel import Panel
from rich.table import Table

from src.core.config import VARIANTS, RunConfig, apply_variant, load_run_config, resolve_seed, validate
from src.core.errors import ConfigError, HDSWError
from src.core.log import console, err_console, setup_logging
from src.evaluation.evaluate import evaluate_checkpoint, load_model
from src.evaluation.flops import count_params_flops
from src.ingest.manifest import read_manifest
from src.ingest.parsers import load_image
from src.ingest.synthetic import generate_synthetic
from src.models.hybrid import build_model
from src.tensor.tensor import Tensor
from src.training.losses import softmax
from src.training.trainer import Trainer

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_IO = 4


class CLIApp:
    """
    hdsw: train, evaluate and inspect the hybrid dense/shifted-window classifier.

    Exit codes: 0 ok, 2 config, 3 shape, 4 io, 1 anything else.

    Usage:
        python main.py gen-synthetic --out data/synth --per-class 10
        python main.py train --manifest data/synth/manifest.tsv --seed 0
        python main.py eval --checkpoint runs/desk/final.hdsw --manifest data/synth/manifest.tsv --split test --out runs/desk/eval
        python main.py predict --checkpoint runs/desk/final.hdsw --image leaf.ppm
        python main.py inspect --config config.yaml --variant all
    """

    def build_parser(self) -> argparse.ArgumentParser:
        parser = argparse.ArgumentParser(prog="hdsw", description="Hybrid Dense-SwinV2 leaf-disease classifier")
        parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING (default: $HDSW_LOG_LEVEL or INFO)")
        sub = parser.add_subparsers(dest="command", required=True)

        p = sub.add_parser("train", help="Train a model from a config and a manifest")
        p.add_argument("--config", type=str, help="YAML or JSON run config (default: ./config.yaml if present)")
        p.add_argument("--manifest", type=str, help="Dataset manifest (overrides data.manifest)")
        p.add_argument("--resume", type=str, help="Continue from a checkpoint")
        p.add_argument("--seed", type=int, help="Run seed (overrides data.seed and $HDSW_SEED)")
        p.add_argument("--epochs", type=int, help="Override train.epochs")
        p.add_argument("--out", type=str, help="Output directory (overrides train.out_dir)")
        p.add_argument("--variant", choices=sorted(VARIANTS), help="Ablation variant")

        p = sub.add_parser("eval", help="Evaluate a checkpoint on one split")
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--manifest", required=True)
        p.add_argument("--split", choices=("train", "test"), default="test")
        p.add_argument("--out", required=True, help="Directory for metrics/confusion/roc/pr/features/pca CSVs")

        p = sub.add_parser("predict", help="Classify one image")
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--image", required=True)

        p = sub.add_parser("inspect", help="Shape trace, parameter count and MAC estimate")
        p.add_argument("--config", type=str)
        p.add_argument("--variant", nargs="+", help=f"One or more of {', '.join(VARIANTS)}, or 'all'")
        p.add_argument("--shapes-only", action="store_true", help="Skip the MAC-counting forward pass")
        p.add_argument("--seed", type=int)

        p = sub.add_parser("gen-synthetic", help="Write a procedural five-class PPM dataset and its manifest")
        p.add_argument("--out", required=True)
        p.add_argument("--per-class", type=int, default=10)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--size", type=int, default=64)
        return parser

    # ── Commands ─────────────────────────────────────────────────────────
    def cmd_train(self, args) -> int:
        cfg = load_run_config(args.config)
        if args.variant:
            apply_variant(cfg, args.variant)
        if args.epochs is not None:
            cfg.train.epochs = args.epochs
        if args.out:
            cfg.train.out_dir = args.out
        if args.manifest:
            cfg.data.manifest = args.manifest
        validate(cfg)
        if not cfg.data.manifest:
            raise ConfigError("no manifest given (use --manifest or set it in the config)", "data.manifest")
        manifest = read_manifest(cfg.data.manifest)

        if args.resume:
            trainer = Trainer.resume(args.resume, manifest, out_dir=args.out,
                                     epochs=args.epochs)
            console.print(f"[bold cyan]🔁 Resuming[/bold cyan] {args.resume} at epoch {trainer.start_epoch}")
        else:
            seed = resolve_seed(args.seed, cfg)
            trainer = Trainer(cfg, manifest, seed=seed)
        console.print(Panel(
            f"[bold]Variant:[/bold] {trainer.cfg.model.variant} ({trainer.cfg.model.preset})\n"
            f"[bold]Train / test:[/bold] {len(trainer.train_set)} / {len(trainer.test_set)}\n"
            f"[bold]Parameters:[/bold] {trainer.model.parameter_count():,}\n"
            f"[bold]Seed:[/bold] {trainer.seed}   [bold]Out:[/bold] {trainer.out_dir}",
            title="Training", expand=False,
        ))
        result = trainer.fit()
        if result.history:
            last = result.history[-1]
            console.print(f"[bold green]✅ Done:[/bold green] epoch {last.epoch}  loss {last.train_loss:.4f}  "
                          f"train acc {last.train_acc:.4f}")
        console.print(f"[dim]checkpoint: {result.checkpoint_path}[/dim]")
        return EXIT_OK

    def cmd_eval(self, args) -> int:
        manifest = read_manifest(args.manifest)
        result = evaluate_checkpoint(args.checkpoint, manifest, args.split, args.out)
        r = result.report

        table = Table(title=f"{args.split} split ({r.total} samples)", show_header=True, header_style="bold cyan")
        for col in ("Class", "Sen", "Pre", "F1", "Spec", "ROC-AUC", "PR-AUC"):
            table.add_column(col, justify="right" if col != "Class" else "left")
        for c in r.classes:
            roc, pr = r.class_roc_auc.get(c.name), r.class_pr_auc.get(c.name)
            table.add_row(c.name, f"{100 * c.sensitivity:.2f}", f"{100 * c.precision:.2f}", f"{100 * c.f1:.2f}",
                          f"{100 * c.specificity:.2f}", "-" if roc is None else f"{roc:.4f}",
                          "-" if pr is None else f"{pr:.4f}")
        console.print(table)
        if r.flags:
            console.print(f"[yellow]⚠️  {', '.join(r.flags)}[/yellow]")
        console.print(f"[bold green]{r.summary()}[/bold green]")
        console.print(f"[dim]artifacts: {args.out}[/dim]")
        return EXIT_OK

    def cmd_predict(self, args) -> int:
        model, _, ckpt = load_model(args.checkpoint)
        img = load_image(args.image, model.input_size)
        logits = model(Tensor(img[None], dtype=model.dtype))
        probs = softmax(logits.data.astype(np.float64))[0]
        top = int(np.argmax(probs))
        # plain stdout: this line is the machine-readable contract
        print(f"{ckpt.labels[top]}\t{','.join(f'{p:.6f}' for p in probs)}")
        return EXIT_OK

    def _variants(self, requested: Optional[List[str]], cfg: RunConfig) -> List[str]:
        if not requested:
            return [cfg.model.variant]
        if requested == ["all"]:
            return list(VARIANTS)
        for v in requested:
            if v not in VARIANTS:
                raise ConfigError(f"unknown variant '{v}' (choose from {', '.join(VARIANTS)})", "--variant")
        return requested

    def cmd_inspect(self, args) -> int:
        base = load_run_config(args.config)
        seed = resolve_seed(args.seed, base)
        variants = self._variants(args.variant, base)

        first = apply_variant(copy.deepcopy(base), variants[0])
        trace = build_model(first, seed).shape_trace()
        shapes = Table(title=f"Shape trace: {first.model.preset}/{first.model.variant}", header_style="bold cyan")
        shapes.add_column("Stage", style="bold")
        shapes.add_column("Shape", justify="right")
        for name, shape in trace:
            shapes.add_row(name, " × ".join(str(s) for s in shape))
        console.print(shapes)

        costs = Table(title="Cost per variant", header_style="bold cyan")
        costs.add_column("Variant", style="bold")
        costs.add_column("Params", justify="right")
        costs.add_column("Dense params", justify="right")
        costs.add_column("MACs", justify="right")
        for v in variants:
            cfg = apply_variant(copy.deepcopy(base), v)
            if args.shapes_only:
                model = build_model(cfg, seed)
                dense = model.dense.parameter_count() if model.dense is not None else 0
                costs.add_row(v, f"{model.parameter_count():,}", f"{dense:,}", "-")
                continue
            with console.status(f"counting {v}..."):
                cost = count_params_flops(cfg, seed)
            costs.add_row(v, f"{cost.params:,}", f"{cost.params_by_branch.get('dense', 0):,}",
                          f"{cost.macs:,} ({cost.gmacs:.3f} G)")
        console.print(costs)
        return EXIT_OK

    def cmd_gen_synthetic(self, args) -> int:
        path = generate_synthetic(args.out, args.per_class, seed=args.seed, size=args.size)
        console.print(f"[bold green]📦 Wrote[/bold green] {5 * args.per_class} images and {path}")
        return EXIT_OK

    # ── Entry ────────────────────────────────────────────────────────────
    def run(self, argv: Optional[List[str]] = None) -> int:
        args = self.build_parser().parse_args(argv)
        setup_logging(args.log_level)
        handler = {
            "train": self.cmd_train,
            "eval": self.cmd_eval,
            "predict": self.cmd_predict,
            "inspect": self.cmd_inspect,
            "gen-synthetic": self.cmd_gen_synthetic,
        }[args.command]
        try:
            return handler(args)
        except HDSWError as e:
            err_console.print(f"[bold red]❌ {type(e).__name__}:[/bold red] {e}")
            logger.debug("command failed", exc_info=True)
            return e.exit_code
        except OSError as e:
            err_console.print(f"[bold red]❌ I/O error:[/bold red] {e}")
            return EXIT_IO
        except KeyboardInterrupt:
            err_console.print("[yellow]Interrupted.[/yellow]")
            return 130


if __name__ == "__main__":
    sys.exit(CLIApp().run())
