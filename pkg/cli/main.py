from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Callable, NoReturn, Sequence

import numpy as np
from immutabledict import immutabledict

from core.errors import DivergenceError, DomainError, LensfieldError
from core.parallel import resolve_threads
from metrics.image_quality import evaluate_images, mean_score
from optics.aperture import ApertureShape
from rendering.field_render import render_view
from scenes.image_io import write_image
from scenes.io import load_dataset, load_scene_spec, save_dataset
from training.checkpoint import load_checkpoint
from training.config import TrainConfig, load_config
from training.state import PerViewOptics
from training.trainer import train

logger = logging.getLogger(__name__)

EXIT_CODES: immutabledict[str, int] = immutabledict({
    "success": 0,
    "usage": 1,
    "data": 2,
    "divergence": 3,
})


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_CODES["usage"], f"{self.prog}: error: {message}\n")


def _view_list(raw: str) -> tuple[int, ...] | None:
    if raw == "all":
        return None
    try:
        indices = tuple(int(part) for part in raw.split(",") if part)
    except ValueError as error:
        raise argparse.ArgumentTypeError(f"expected 'all' or comma-separated indices, got {raw!r}") from error
    if not indices or min(indices) < 0:
        raise argparse.ArgumentTypeError(f"expected non-negative view indices, got {raw!r}")
    return indices


def cmd_gen_synth(args: argparse.Namespace) -> int:
    spec = load_scene_spec(args.spec, seed=args.seed, pattern=args.pattern, n_views=args.views, image_format=args.format)
    dataset = spec.build_dataset()
    save_dataset(dataset, args.out, spec.image_format)
    print(f"{dataset.name}: {len(dataset)} views ({len(dataset.train_indices)} train, {len(dataset.test_indices)} test), "
          f"pattern {spec.pattern.value}, written to {args.out}")
    for index, view in enumerate(dataset):
        assert view.optics is not None
        print(f"  view {index:3d} {view.split.value:5s} K*={view.optics.aperture:g} F*={view.optics.focus:g}")
    return EXIT_CODES["success"]


def _train_overrides(args: argparse.Namespace) -> dict[str, Any]:
    return {
        "n_iters": args.iters, "n_pretrain": args.pretrain, "patch_size": args.patch, "anchor_stride": args.anchor,
        "guard": args.guard, "gamma": args.gamma, "r_max": args.rmax, "seed": args.seed, "lr": args.lr,
        "threads": args.threads,
    }


def cmd_train(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.dataset)
    overrides = _train_overrides(args)
    state = None
    config: TrainConfig
    if args.resume is not None:
        state, saved = load_checkpoint(args.resume)
        config = saved.with_overrides(**overrides)
    else:
        config = load_config(args.config, **overrides)
    logger.info("Training on %s with %d threads", args.dataset, resolve_threads(config.threads))
    report = train(dataset, config, args.out, state, progress=args.progress)
    last = report.records[-1] if report.records else None
    print(f"checkpoint: {report.checkpoint}")
    if last is not None:
        print(f"final loss: {last.loss:.6g} at step {last.step} (stage {last.stage})")
    for stage in (1, 2):
        if report.stage_steps.get(stage):
            print(f"stage {stage}: {report.stage_steps[stage]} steps, {report.seconds_per_iteration(stage):.4f} s/step")
    return EXIT_CODES["success"]


def cmd_render(args: argparse.Namespace) -> int:
    state, config = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.dataset)
    shape = ApertureShape.from_blades(args.blades, args.rotation)
    gamma = config.resolved_gamma(dataset.gamma)
    indices = list(range(len(dataset))) if args.views is None else list(args.views)
    missing = [index for index in indices if index >= len(dataset)]
    if missing:
        args.parser.error(f"argument --views: view {missing[0]} doesn't exist, the dataset has {len(dataset)} views")
    out = Path(args.out)
    single_file = len(indices) == 1 and out.suffix in (".png", ".bin")
    if not single_file:
        out.mkdir(parents=True, exist_ok=True)
    for index in indices:
        view = dataset[index]
        focus = args.focus if args.focus is not None else float(state.optics.focus[index])
        image = render_view(
            state.params, view.camera, args.aperture, focus, shape, gamma, config.r_max,
            args.samples or config.n_samples, args.threads or config.threads, config.chunk_size,
        )
        target = out if single_file else out / f"render_{index:03d}.{args.format}"
        write_image(target, image)
        print(f"view {index}: K={args.aperture:g} F={focus:g} -> {target}")
    return EXIT_CODES["success"]


def cmd_eval(args: argparse.Namespace) -> int:
    state, config = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.dataset)
    indices = dataset.test_indices
    if not indices:
        raise DomainError("The dataset has no test views to evaluate.")
    gamma = config.resolved_gamma(dataset.gamma)
    renders: list[np.ndarray] = []
    truths: list[np.ndarray] = []
    for index in indices:
        view = dataset[index]
        renders.append(render_view(
            state.params, view.camera, 0.0, 1.0, None, gamma, config.r_max,
            args.samples or config.n_samples, args.threads or config.threads, config.chunk_size,
        ))
        truths.append(view.all_in_focus if view.all_in_focus is not None else view.image)
    scores = evaluate_images(renders, truths, indices)
    print("view,psnr,ssim")
    for score in scores:
        print(f"{score.view},{score.psnr!r},{score.ssim!r}")
    mean_psnr, mean_ssim = mean_score(scores)
    print(f"mean,{mean_psnr!r},{mean_ssim!r}")
    return EXIT_CODES["success"]


def plot_optics(optics: PerViewOptics, path: Path | str) -> None:
    """
    Saves bar charts of the per-view aperture and focus, frozen views drawn hatched.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    views = np.arange(len(optics))
    figure, (top, bottom) = plt.subplots(2, 1, figsize=(max(4.0, 0.5 * len(optics)), 5.0), sharex=True)
    hatches = ["" if trainable else "//" for trainable in optics.trainable]
    for axis, values, label in ((top, optics.aperture, "aperture K"), (bottom, optics.focus, "focus F")):
        bars = axis.bar(views, values, color="tab:blue")
        for bar, hatch in zip(bars, hatches):
            bar.set_hatch(hatch)
        axis.set_ylabel(label)
    bottom.set_xlabel("view")
    bottom.set_xticks(views)
    figure.tight_layout()
    figure.savefig(Path(path))
    plt.close(figure)


def cmd_inspect_params(args: argparse.Namespace) -> int:
    state, _ = load_checkpoint(args.checkpoint)
    optics = state.optics
    print(f"step {state.step}")
    print("view,aperture,focus,status")
    for index in range(len(optics)):
        status = "train" if optics.trainable[index] else "frozen"
        print(f"{index},{float(optics.aperture[index])!r},{float(optics.focus[index])!r},{status}")
    if args.plot is not None:
        plot_optics(optics, args.plot)
        print(f"plot: {args.plot}")
    return EXIT_CODES["success"]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lensfield", description="Depth of field aware radiance fields.")
    parser.add_argument("--verbose", action="store_true", help="log at DEBUG level")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen-synth", help="render a synthetic dataset with known optics")
    gen.add_argument("spec", nargs="?", type=Path, help="TOML scene spec, the default recovery scene when omitted")
    gen.add_argument("--out", type=Path, required=True)
    gen.add_argument("--seed", type=int)
    gen.add_argument("--pattern", choices=("alternating_focus", "alternating_aperture", "all_in_focus"))
    gen.add_argument("--views", type=int)
    gen.add_argument("--format", choices=("bin", "png"))
    gen.set_defaults(handler=cmd_gen_synth)

    fit = commands.add_parser("train", help="fit a field and per-view optics")
    fit.add_argument("dataset", type=Path)
    fit.add_argument("--out", type=Path, required=True)
    fit.add_argument("--config", type=Path)
    fit.add_argument("--resume", type=Path, help="checkpoint to continue from")
    fit.add_argument("--iters", type=int)
    fit.add_argument("--pretrain", type=int)
    fit.add_argument("--patch", type=int)
    fit.add_argument("--anchor", type=int)
    fit.add_argument("--guard", type=int)
    fit.add_argument("--gamma", type=float)
    fit.add_argument("--rmax", type=float)
    fit.add_argument("--seed", type=int)
    fit.add_argument("--lr", type=float)
    fit.add_argument("--threads", type=int)
    fit.add_argument("--progress", action="store_true")
    fit.set_defaults(handler=cmd_train)

    render = commands.add_parser("render", help="render views with virtual optics")
    render.add_argument("checkpoint", type=Path)
    render.add_argument("--dataset", type=Path, required=True, help="dataset whose poses are rendered")
    render.add_argument("--views", type=_view_list, help="'all' or comma-separated view indices")
    render.add_argument("--aperture", type=float, default=0.0)
    render.add_argument("--focus", type=float, help="focus distance, the view's learned focus when omitted")
    render.add_argument("--blades", type=int)
    render.add_argument("--rotation", type=float, default=0.0)
    render.add_argument("--samples", type=int)
    render.add_argument("--threads", type=int)
    render.add_argument("--format", choices=("png", "bin"), default="png")
    render.add_argument("--out", type=Path, required=True)
    render.set_defaults(handler=cmd_render, parser=render)

    evaluate = commands.add_parser("eval", help="all-in-focus PSNR and SSIM on the test views")
    evaluate.add_argument("checkpoint", type=Path)
    evaluate.add_argument("dataset", type=Path)
    evaluate.add_argument("--samples", type=int)
    evaluate.add_argument("--threads", type=int)
    evaluate.set_defaults(handler=cmd_eval)

    inspect = commands.add_parser("inspect-params", help="print the learned per-view optics")
    inspect.add_argument("checkpoint", type=Path)
    inspect.add_argument("--plot", type=Path, help="also save a bar chart image")
    inspect.set_defaults(handler=cmd_inspect_params)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """
    Runs one command and returns its exit code: 0 success, 1 usage, 2 data error, 3 numeric divergence.
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    handler: Callable[[argparse.Namespace], int] = args.handler
    try:
        return handler(args)
    except DivergenceError as error:
        logger.error("%s", error)
        return EXIT_CODES["divergence"]
    except (LensfieldError, OSError) as error:
        logger.error("%s", error)
        return EXIT_CODES["data"]


def run() -> NoReturn:
    sys.exit(main())
