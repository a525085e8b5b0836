"""Command-line entry point: ``latxgen <command> [options]``."""
import argparse
import logging
import sys
import time
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from latxgen.core.ablation import ablate_rotation, ablate_sdn, ablate_sls
from latxgen.core.dataset import Corpus, frame_to_input, load_frame
from latxgen.core.errors import LatXGenError
from latxgen.core.evaluation import evaluate_directories, save_grid, write_report, write_scores_csv
from latxgen.core.geometry import transform_frame
from latxgen.core.manifest import RunManifest
from latxgen.core.phantom import RenderSettings, SampleRanges, generate_corpus
from latxgen.core.tensor import Tensor, no_grad
from latxgen.core.trainer import TrainConfig, load_lrs, load_sme, pretrain_sls_stage, train_stage
from latxgen.utils.config import Config
from latxgen.utils.helpers import format_duration, load_png_unit, save_png8
from latxgen.utils.logger import close_file_handlers, setup_logger

logger = logging.getLogger("latxgen")


def _pair(text: str) -> Tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'lo,hi', got '{text}'") from None
    if lo > hi:
        raise argparse.ArgumentTypeError(f"range '{text}' has lo > hi")
    return lo, hi


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latxgen", description="Posterior RGB-D to lateral spine radiograph synthesis"
    )
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, corpus: bool = True) -> None:
        p.add_argument("--config", type=Path, help="key=value config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", type=Path, required=True, help="output root")
        p.add_argument("--workers", type=int, default=4)
        if corpus:
            p.add_argument("--corpus", type=Path, required=True, help="corpus directory")

    p = sub.add_parser("gen-data", help="render a phantom corpus")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--split-ratio", type=float, default=0.8)
    p.add_argument("--tka", type=_pair, help="TKA sampling range 'lo,hi' in degrees")
    p.add_argument("--lla", type=_pair, help="LLA sampling range 'lo,hi' in degrees")
    p.add_argument("--ssa", type=_pair, help="SSA sampling range 'lo,hi' in degrees")
    p.add_argument("--width", type=int, default=96)
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--workers", type=int, default=4)

    common(sub.add_parser("pretrain-sls", help="pretrain the radiograph landmark network"))
    common(sub.add_parser("train-sme", help="train the curve stage"))
    p = sub.add_parser("train-lrs", help="train the radiograph stage")
    common(p)
    p.add_argument("--sme", type=Path, required=True, help="SME checkpoint")
    p.add_argument("--sls", type=Path, help="SLS checkpoint (needed when gamma > 0)")

    p = sub.add_parser("infer", help="synthesise curve map and radiograph for frames")
    common(p, corpus=False)
    p.add_argument("--sme", type=Path, required=True)
    p.add_argument("--lrs", type=Path, required=True)
    p.add_argument("--frame", type=Path, required=True, help="frame directory or a directory of frames")
    p.add_argument("--grid", action="store_true", help="also write GT | prediction grids")

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred-dir", type=Path, required=True)
    p.add_argument("--gt-dir", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--angles", action="store_true", help="regression/confusion report on curve-map angles")
    p.add_argument("--grid", action="store_true")

    p = sub.add_parser("ablate", help="run an ablation study")
    common(p)
    p.add_argument("--what", required=True, choices=["rotation", "sls", "sdn"])
    p.add_argument("--sme", type=Path, help="SME checkpoint (sls ablation)")
    p.add_argument("--sls", type=Path, help="SLS checkpoint (sls ablation)")
    return parser


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _config(args: argparse.Namespace) -> Config:
    overrides = {"seed": args.seed} if getattr(args, "seed", None) is not None else {}
    return Config(getattr(args, "config", None), overrides)


def cmd_gen_data(args: argparse.Namespace, manifest: RunManifest) -> None:
    defaults = SampleRanges()
    ranges = SampleRanges(
        tka=args.tka or defaults.tka,
        lla=args.lla or defaults.lla,
        ssa=args.ssa or defaults.ssa,
    )
    settings = RenderSettings(width=args.width, height=args.height)
    generate_corpus(args.n, args.seed, args.out, args.split_ratio, ranges, settings, args.workers)
    manifest.corpus_id = f"n{args.n}-seed{args.seed}"


def cmd_pretrain_sls(args: argparse.Namespace, manifest: RunManifest) -> None:
    corpus = Corpus(args.corpus)
    manifest.corpus_id = corpus.corpus_id
    pretrain_sls_stage(corpus, TrainConfig.from_config(_config(args)), args.out, args.workers)


def cmd_train(stage: str) -> Callable[[argparse.Namespace, RunManifest], None]:
    def run(args: argparse.Namespace, manifest: RunManifest) -> None:
        corpus = Corpus(args.corpus)
        manifest.corpus_id = corpus.corpus_id
        config = TrainConfig.from_config(_config(args), stage=stage)
        train_stage(
            stage,
            corpus,
            config,
            args.out,
            sme_checkpoint=getattr(args, "sme", None),
            sls_checkpoint=getattr(args, "sls", None),
            workers=args.workers,
        )

    return run


def _frame_dirs(root: Path) -> List[Path]:
    if (root / "meta.txt").exists():
        return [root]
    frames = sorted(p for p in root.iterdir() if (p / "meta.txt").exists())
    if not frames:
        raise FileNotFoundError(f"no frame directories (with meta.txt) under {root}")
    return frames


def cmd_infer(args: argparse.Namespace, manifest: RunManifest) -> None:
    bundle = load_sme(args.sme)
    lrs = load_lrs(args.lrs)
    for frame_dir in _frame_dirs(args.frame):
        frame = transform_frame(load_frame(frame_dir), bundle.theta)
        image = frame_to_input(frame, bundle.depth_offset, bundle.depth_scale)[None]
        curve = bundle.predict(image, frame.landmarks.points[None])
        with no_grad():
            xray = lrs(Tensor(np.concatenate([image, curve], axis=1))).data
        target = args.out / frame_dir.name
        save_png8(target / "curve.png", curve[0, 0])
        save_png8(target / "xray.png", xray[0, 0])
        if args.grid:
            for name, pred in (("curve", curve[0, 0]), ("xray", xray[0, 0])):
                if (frame_dir / f"{name}.png").exists():
                    save_grid(target / f"{name}_grid.png", load_png_unit(frame_dir / f"{name}.png"), pred)
        logger.info(f"Synthesised {target}")


def cmd_eval(args: argparse.Namespace, manifest: RunManifest) -> None:
    result = evaluate_directories(
        args.pred_dir, args.gt_dir, measure_angles=args.angles, grid_dir=args.out / "grids" if args.grid else None
    )
    write_scores_csv(args.out / "scores.csv", {"mean": result.seg})
    report: Dict[str, object] = {"count": result.count, "psnr": result.psnr, **result.seg.row()}
    write_report(args.out / "report.txt", report)
    if result.angles:
        write_report(args.out / "angles.txt", result.angles)


def cmd_ablate(args: argparse.Namespace, manifest: RunManifest) -> None:
    corpus = Corpus(args.corpus)
    manifest.corpus_id = corpus.corpus_id
    config = TrainConfig.from_config(_config(args))
    if args.what == "rotation":
        ablate_rotation(corpus, config, args.out, workers=args.workers)
    elif args.what == "sdn":
        ablate_sdn(corpus, config, args.out, workers=args.workers)
    else:
        if args.sme is None:
            raise LatXGenError("ablate --what sls needs --sme", error_type="prerequisite")
        ablate_sls(corpus, config, args.out, args.sme, args.sls, workers=args.workers)


COMMANDS: Dict[str, Callable[[argparse.Namespace, RunManifest], None]] = {
    "gen-data": cmd_gen_data,
    "pretrain-sls": cmd_pretrain_sls,
    "train-sme": cmd_train("sme"),
    "train-lrs": cmd_train("lrs"),
    "infer": cmd_infer,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command; returns the process exit status (0 ok, 1 failure)."""
    args = build_parser().parse_args(argv)
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    log = setup_logger("latxgen", level=getattr(logging, args.log_level), log_file=out / "run.log")

    started = time.monotonic()
    try:
        config = _config(args)
        seed = args.seed if getattr(args, "seed", None) is not None else config.get("seed")
        manifest = RunManifest(command=args.command, config_hash=config.hash(), corpus_id="", seed=int(seed))
        log.info("=" * 60)
        log.info(f"latxgen {args.command} started (seed {seed})")
        COMMANDS[args.command](args, manifest)
        manifest.duration_seconds = round(time.monotonic() - started, 3)
        manifest.add_artifacts(out)
        manifest.save(out)
    except (LatXGenError, OSError) as e:
        log.error(f"{args.command} failed: {getattr(e, 'message', e)}")
        return 1
    finally:
        log.info(f"latxgen {args.command} finished in {format_duration(time.monotonic() - started)}")
        close_file_handlers(log)
    return 0


if __name__ == "__main__":
    sys.exit(main())
