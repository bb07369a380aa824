import json
from pathlib import Path
from typing import Any, Dict, List, Optional

import click
import torch
from loguru import logger
from pydantic import ValidationError

from app.config.config_utils import get_guidance_config, get_schedule_config, get_train_config, get_tubelet_config
from app.config.runtime import derive_seed
from app.config.settings import settings
from app.models.denoiser import DenoiserNet
from app.models.enums import InitVariant, JacobianMode, MaskMode, PlotKind, TransitionVariant
from app.models.transition import TubeletTransformer
from app.repositories.checkpoint_repository import model_store
from app.repositories.mask_repository import mask_repository
from app.repositories.report_repository import report_repository
from app.repositories.sequence_repository import load_sequence, pgm_repository, save_sequence
from app.schemas.reports import SweepConfig
from app.schemas.sampling import GuidanceConfig
from app.schemas.sequences import Sequence, SequenceConfig
from app.schemas.training import ScoreTrainConfig, TransitionSpec, TransitionTrainConfig
from app.services.bench_service import bench_service
from app.services.diffusion_service import make_schedule, to_model_space
from app.services.measurement_service import measurement_service
from app.services.plot_service import plot_service
from app.services.score_service import score_service
from app.services.sequence_service import sequence_service
from app.services.transition_service import TransitionModel, transition_service
from app.utils.exceptions import ConfigurationError, FormatError, NumericalDivergenceError, SeqDiffError
from app.utils.logger.logger_config import LoggerUtils


def _read_document(path: Optional[str]) -> Dict[str, Any]:
    if path is None:
        return {}
    try:
        with open(path, "r") as fh:
            doc = json.load(fh)
    except FileNotFoundError as e:
        raise ConfigurationError(f"config file {path} not found") from e
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"config file {path} is not valid JSON (line {e.lineno})") from e
    if not isinstance(doc, dict):
        raise ConfigurationError(f"config file {path} must hold a JSON object")
    return doc


def _collect_sequences(paths: List[str]) -> List[Sequence]:
    files: List[Path] = []
    for raw in paths:
        p = Path(raw)
        files.extend(sorted(p.glob("*.seqf")) if p.is_dir() else [p])
    if not files:
        raise FormatError("no SEQF files found")
    return [load_sequence(f) for f in files]


class BenchController:
    """Maps CLI arguments onto services and domain errors onto exit codes."""

    def __init__(self):
        self.schedule = None

    def _schedule(self):
        if self.schedule is None:
            self.schedule = make_schedule(**get_schedule_config())
        return self.schedule

    def execute(self, action, *args, **kwargs):
        """Run an action; domain errors become click exits with their exit codes."""
        try:
            return action(*args, **kwargs)
        except SeqDiffError as e:
            if isinstance(e, NumericalDivergenceError):
                logger.error(f"Numerical divergence: {e.message}")
            else:
                logger.warning(f"{type(e).__name__}: {e.message}")
            click.echo(f"error: {e.message}", err=True)
            raise click.exceptions.Exit(e.exit_code)
        except ValidationError as e:
            logger.warning(f"Invalid configuration: {e}")
            click.echo(f"error: invalid configuration: {e.errors()[0]['msg']}", err=True)
            raise click.exceptions.Exit(ConfigurationError.exit_code)

    # gen

    def gen(self, config_path: Optional[str], seed: Optional[int], out: Path, count: int) -> List[Path]:
        doc = _read_document(config_path)
        count = int(doc.pop("count", count))
        if count < 1:
            raise ConfigurationError("count must be positive")
        base = SequenceConfig(**doc)
        master = base.seed if seed is None else seed
        paths = []
        for i in range(count):
            cfg = base.model_copy(update={"seed": derive_seed(master, i)})
            paths.append(save_sequence(sequence_service.generate(cfg), out / f"seq_{i:03d}.seqf"))
        LoggerUtils.log_experiment_event("dataset written", sequences=count, out=str(out))
        click.echo(f"wrote {count} sequences to {out}")
        return paths

    # training

    def train_score(self, data: List[str], config_path: Optional[str], seed: Optional[int], out: Path) -> Path:
        doc = {**get_train_config(), "denoiser": {"channels": settings.denoiser_channels}, **_read_document(config_path)}
        if seed is not None:
            doc["seed"] = seed
        config = ScoreTrainConfig(**doc)
        schedule = self._schedule()
        frames = torch.cat([s.frames for s in _collect_sequences(data)])
        torch.manual_seed(derive_seed(config.seed, 9))
        model = DenoiserNet(config.denoiser.model_copy(update={"horizon_T": schedule.horizon_T}))
        result = score_service.train_score(model, to_model_space(frames), schedule, config)
        path = model_store.save_denoiser(result.model, out / "denoiser.sdmc")
        self._write_losses(result.losses, out / "train_score_loss.csv")
        click.echo(f"saved denoiser ({model.parameter_count} parameters) to {path}")
        return path

    def train_transition(self, data: List[str], config_path: Optional[str], seed: Optional[int], out: Path) -> Path:
        doc = {**get_train_config(), "context_k": settings.context_k, "tubelet": get_tubelet_config()}
        doc.update(_read_document(config_path))
        if seed is not None:
            doc["seed"] = seed
        config = TransitionTrainConfig(**doc)
        sequences = _collect_sequences(data)
        height, width = sequences[0].shape
        try:
            spec = TransitionSpec(context_k=config.context_k, height=height, width=width, tubelet=config.tubelet)
        except ValidationError as e:
            raise ConfigurationError(f"tubelet does not tile the data: {e.errors()[0]['msg']}") from e
        torch.manual_seed(derive_seed(config.seed, 9))
        model = TubeletTransformer(spec)
        result = transition_service.train_transition(model, [s.frames for s in sequences], config)
        path = model_store.save_transition(result.model, out / "transition.sdmc")
        self._write_losses(result.losses, out / "train_transition_loss.csv")
        click.echo(f"saved transition model ({model.parameter_count} parameters) to {path}")
        return path

    def _write_losses(self, losses: List[float], path: Path) -> None:
        report_repository.write_table(path, ("iteration", "loss"), [(i, float(v)) for i, v in enumerate(losses)])

    # reconstruction

    def _guidance(self, doc: Dict[str, Any]) -> GuidanceConfig:
        return GuidanceConfig(**{**get_guidance_config(analytic=False), **doc})

    def _transition(self, ckpt: Optional[str], variant: TransitionVariant) -> Optional[TransitionModel]:
        if variant == TransitionVariant.TUBELET:
            if ckpt is None:
                return None
            return transition_service.build(variant, model_store.load_transition(ckpt))
        return transition_service.build(variant)

    def run(
        self,
        sequence_path: str,
        score_ckpt: str,
        strategy: InitVariant,
        n_prime: int,
        seed: int,
        out: Path,
        transition_ckpt: Optional[str] = None,
        transition: TransitionVariant = TransitionVariant.TUBELET,
        keep_fraction: Optional[float] = None,
        mask_mode: MaskMode = MaskMode.FIXED,
        guidance_path: Optional[str] = None,
    ) -> Path:
        schedule = self._schedule()
        seq = load_sequence(sequence_path)
        guidance = self._guidance(_read_document(guidance_path))
        score_model = score_service.network_score(
            model_store.load_denoiser(score_ckpt), exact_linearization=guidance.jacobian_mode == JacobianMode.EXACT
        )
        transition_model = self._transition(transition_ckpt, transition)
        if strategy == InitVariant.SEQDIFF_PLUS and transition_model is None:
            raise ConfigurationError("seqdiffplus with tubelet-attention needs --transition-ckpt")
        if n_prime > schedule.steps_N or n_prime < 1:
            raise ConfigurationError(f"--n-prime must lie in [1, {schedule.steps_N}]")

        keep = settings.keep_fraction if keep_fraction is None else keep_fraction
        observations, operators = bench_service.make_observations(seq, keep, mask_mode, seed, settings.noise_std)
        result, rows = bench_service.reconstruct_rows(
            Path(sequence_path).stem,
            seq,
            observations,
            strategy,
            n_prime,
            score_model,
            schedule,
            guidance,
            seed,
            transition_model=transition_model,
            context_k=settings.context_k,
            label_n_prime=n_prime,
        )

        recon = Sequence(frames=torch.stack(result.frames).to(torch.float32))
        save_sequence(recon, out / "reconstruction.seqf")
        report_repository.save(rows, out / "run.csv")
        mask_repository.save([op.columns for op in operators], out / "masks.mask")
        for t, obs in enumerate(observations):
            zero_filled = measurement_service.zero_fill(obs.operator, obs.values)
            pgm_repository.save(seq.frames[t], out / "frames" / f"target_{t:03d}.pgm")
            pgm_repository.save(zero_filled, out / "frames" / f"observed_{t:03d}.pgm")
            pgm_repository.save(result.frames[t], out / "frames" / f"recon_{t:03d}.pgm")

        mean_psnr = sum(r.psnr_db for r in rows) / len(rows)
        click.echo(f"{strategy.value} N'={n_prime}: mean PSNR {mean_psnr:.2f} dB over {len(rows)} frames")
        logger.info(f"Run finished, mean PSNR {mean_psnr:.3f} dB", extra={"frames": len(rows)})
        return out / "run.csv"

    def sweep(
        self,
        config_path: Optional[str],
        score_ckpt: str,
        seed: Optional[int],
        out: Path,
        transition_ckpt: Optional[str] = None,
    ) -> Path:
        doc = _read_document(config_path)
        if seed is not None:
            doc["master_seed"] = seed
        config = SweepConfig(**doc)
        if config.guidance is None:
            config = config.model_copy(update={"guidance": self._guidance({})})
        score_model = score_service.network_score(
            model_store.load_denoiser(score_ckpt),
            exact_linearization=config.guidance.jacobian_mode == JacobianMode.EXACT,
        )
        transition_model = self._transition(transition_ckpt, config.transition)
        result = bench_service.run_sweep(config, score_model, self._schedule(), transition_model, out_dir=out)
        for strategy, n_prime, mean_psnr, spread, splits in result.psnr_vs_steps:
            click.echo(f"{strategy:12s} N'={n_prime:<4d} {mean_psnr:7.2f} dB (+-{spread:.2f}, {splits} splits)")
        return out / "sweep.csv"

    def plot(self, csv_path: str, kind: PlotKind, out: Path, num_bins: int = 5) -> Path:
        path = plot_service.emit_plot(csv_path, kind, out / f"{kind.value}.svg", num_bins=num_bins)
        click.echo(f"wrote {path}")
        return path


bench_controller = BenchController()
