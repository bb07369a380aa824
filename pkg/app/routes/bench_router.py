from pathlib import Path

import click

from app.config.settings import settings
from app.controllers.bench_controller import bench_controller
from app.models.enums import InitVariant, MaskMode, PlotKind, TransitionVariant
from app.utils.logger.middleware import CommandLoggingMiddleware

command_logging = CommandLoggingMiddleware(settings)


def _choice(enum_cls) -> click.Choice:
    return click.Choice([member.value for member in enum_cls])


config_option = click.option(
    "--config", "config_path", type=click.Path(dir_okay=False), default=None, help="JSON document with command settings."
)
seed_option = click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=None, help="Master seed (u64).")
out_option = click.option(
    "--out",
    type=click.Path(file_okay=False, path_type=Path),
    default=lambda: Path(settings.output_dir),
    show_default="settings.output_dir",
    help="Directory receiving every output file.",
)


@click.command("gen")
@config_option
@seed_option
@out_option
@click.option("--count", type=click.IntRange(min=1), default=1, show_default=True, help="Sequences to write.")
@command_logging
def gen(config_path, seed, out, count):
    """Write synthetic SEQF sequences."""
    bench_controller.execute(bench_controller.gen, config_path, seed, out, count)


@click.command("train-score")
@click.argument("data", nargs=-1, required=True)
@config_option
@seed_option
@out_option
@command_logging
def train_score(data, config_path, seed, out):
    """Train the denoiser on SEQF files or directories."""
    bench_controller.execute(bench_controller.train_score, list(data), config_path, seed, out)


@click.command("train-transition")
@click.argument("data", nargs=-1, required=True)
@config_option
@seed_option
@out_option
@command_logging
def train_transition(data, config_path, seed, out):
    """Train the tubelet-attention next-frame predictor."""
    bench_controller.execute(bench_controller.train_transition, list(data), config_path, seed, out)


@click.command("run")
@click.argument("sequence", type=click.Path(dir_okay=False))
@click.option("--score-ckpt", required=True, help="Denoiser SDMC checkpoint.")
@click.option("--strategy", type=_choice(InitVariant), default=InitVariant.SEQDIFF.value, show_default=True)
@click.option("--n-prime", type=int, default=lambda: settings.default_n_prime, show_default="settings.default_n_prime")
@click.option("--transition", type=_choice(TransitionVariant), default=TransitionVariant.TUBELET.value, show_default=True)
@click.option("--transition-ckpt", default=None, help="Transition SDMC checkpoint for tubelet-attention.")
@click.option("--keep-fraction", type=float, default=None, help="Kept column fraction (default from settings).")
@click.option("--mask-mode", type=_choice(MaskMode), default=MaskMode.FIXED.value, show_default=True)
@config_option
@seed_option
@out_option
@command_logging
def run(sequence, score_ckpt, strategy, n_prime, transition, transition_ckpt, keep_fraction, mask_mode, config_path, seed, out):
    """Reconstruct one sequence; --config holds guidance settings."""
    bench_controller.execute(
        bench_controller.run,
        sequence,
        score_ckpt,
        InitVariant(strategy),
        n_prime,
        0 if seed is None else seed,
        out,
        transition_ckpt=transition_ckpt,
        transition=TransitionVariant(transition),
        keep_fraction=keep_fraction,
        mask_mode=MaskMode(mask_mode),
        guidance_path=config_path,
    )


@click.command("sweep")
@click.option("--score-ckpt", required=True, help="Denoiser SDMC checkpoint.")
@click.option("--transition-ckpt", default=None, help="Transition SDMC checkpoint for seqdiffplus.")
@config_option
@seed_option
@out_option
@command_logging
def sweep(score_ckpt, transition_ckpt, config_path, seed, out):
    """Run a strategy x N' x motion sweep and write CSV reports."""
    bench_controller.execute(bench_controller.sweep, config_path, score_ckpt, seed, out, transition_ckpt=transition_ckpt)


@click.command("plot")
@click.argument("csv_path", type=click.Path(dir_okay=False))
@click.option("--kind", type=_choice(PlotKind), default=PlotKind.PSNR_VS_STEPS.value, show_default=True)
@click.option("--bins", "num_bins", type=click.IntRange(min=1), default=5, show_default=True)
@out_option
@command_logging
def plot(csv_path, kind, num_bins, out):
    """Render an SVG from a RunReport CSV."""
    bench_controller.execute(bench_controller.plot, csv_path, PlotKind(kind), out, num_bins=num_bins)


bench_commands = [gen, train_score, train_transition, run, sweep, plot]
