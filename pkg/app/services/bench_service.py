# app/services/bench_service.py
import math
from collections import defaultdict
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np
import torch
from loguru import logger

from app.config.config_utils import get_guidance_config
from app.config.runtime import derive_seed
from app.config.settings import settings
from app.models.enums import InitVariant, MaskMode, SequenceKind, TransitionVariant
from app.repositories.report_repository import report_repository
from app.schemas.diffusion import NoiseSchedule
from app.schemas.measurement import LinearOperator, Observation
from app.schemas.reports import RunReportRow, SweepConfig
from app.schemas.sampling import AdaptiveStepPolicy, GuidanceConfig
from app.schemas.sequences import Sequence, SequenceConfig
from app.services.measurement_service import measurement_service
from app.services.sampler_service import StepChoice, sampler_service
from app.services.score_service import ScoreModel
from app.services.sequence_service import sequence_service
from app.services.transition_service import TransitionModel, transition_service
from app.utils.exceptions import CheckpointError, ConfigurationError, ShapeMismatchError
from app.utils.logger.logger_config import LoggerUtils
from app.utils.logger.setup import LogPerformance

# Relative SeqDiff+ over SeqDiff improvement reported at severe motion, in percent.
REFERENCE_IMPROVEMENT_PCT = 8.0

# Key offsets separating the seed streams of one sequence.
_MASK_STREAM, _NOISE_STREAM, _SAMPLER_STREAM = 1, 2, 3


def psnr(x: torch.Tensor, ref: torch.Tensor, cap: Optional[float] = None) -> float:
    """10 log10(1 / MSE) with peak 1.0; zero error returns the cap."""
    cap = settings.psnr_cap if cap is None else cap
    if x.shape != ref.shape:
        raise ShapeMismatchError(f"psnr shapes differ: {tuple(x.shape)} vs {tuple(ref.shape)}")
    mse = float((x.double() - ref.double()).pow(2).mean())
    if mse == 0.0:
        return cap
    return min(10.0 * math.log10(1.0 / mse), cap)


def motion(seq: Sequence) -> List[float]:
    return sequence_service.motion(seq.frames)


def split_of(sequence_id: str) -> int:
    """Split index encoded in sweep sequence ids ("s01-m02-q003")."""
    try:
        return int(sequence_id.split("-")[0][1:])
    except (IndexError, ValueError):
        return 0


def steady_rows(rows: List[RunReportRow]) -> List[RunReportRow]:
    """Frames after the first; frame 0 is a full Vanilla run for every strategy."""
    later = [r for r in rows if r.frame >= 1]
    return later or list(rows)


def motion_bins(rows: List[RunReportRow], num_bins: int) -> Tuple[Dict[str, int], List[float]]:
    """Assign each sequence to an equal-width bin of its mean steady-state motion.

    Returns the sequence-to-bin map and the mean motion of every nonempty bin.
    """
    per_seq: Dict[str, List[float]] = defaultdict(list)
    for r in steady_rows(rows):
        per_seq[r.sequence_id].append(r.motion)
    if not per_seq:
        return {}, []
    seq_motion = {sid: float(np.mean(v)) for sid, v in per_seq.items()}
    lo, hi = min(seq_motion.values()), max(seq_motion.values())
    width = (hi - lo) / num_bins
    raw = {sid: (min(int((m - lo) / width), num_bins - 1) if width > 0 else 0) for sid, m in seq_motion.items()}
    used = sorted(set(raw.values()))
    remap = {b: i for i, b in enumerate(used)}
    assignment = {sid: remap[b] for sid, b in raw.items()}
    centers = [float(np.mean([seq_motion[s] for s, b in assignment.items() if b == i])) for i in range(len(used))]
    return assignment, centers


def _group_mean(rows: List[RunReportRow], key) -> Dict:
    groups: Dict = defaultdict(list)
    for r in rows:
        groups[key(r)].append(r.psnr_db)
    return {k: float(np.mean(v)) for k, v in groups.items()}


def psnr_vs_steps_table(rows: List[RunReportRow]) -> List[Tuple]:
    """(strategy, n_prime, mean PSNR, std over splits, splits) with the mean taken per split first."""
    per_split = _group_mean(steady_rows(rows), lambda r: (r.strategy.value, r.n_prime, split_of(r.sequence_id)))
    cells: Dict[Tuple[str, int], List[float]] = defaultdict(list)
    for (strategy, n_prime, _), value in sorted(per_split.items()):
        cells[(strategy, n_prime)].append(value)
    return [
        (strategy, n_prime, float(np.mean(values)), float(np.std(values)), len(values))
        for (strategy, n_prime), values in sorted(cells.items())
    ]


def best_steps_table(rows: List[RunReportRow], num_bins: int) -> List[Tuple]:
    """(strategy, motion bin centre, best n_prime, its mean PSNR) per strategy and bin."""
    assignment, centers = motion_bins(rows, num_bins)
    means = _group_mean(
        [r for r in steady_rows(rows) if r.sequence_id in assignment],
        lambda r: (r.strategy.value, assignment[r.sequence_id], r.n_prime),
    )
    best: Dict[Tuple[str, int], Tuple[int, float]] = {}
    for (strategy, b, n_prime), value in sorted(means.items()):
        current = best.get((strategy, b))
        if current is None or value > current[1]:
            best[(strategy, b)] = (n_prime, value)
    return [(s, centers[b], n, v) for (s, b), (n, v) in sorted(best.items())]


def motion_fit_table(rows: List[RunReportRow]) -> List[Tuple]:
    """Least-squares PSNR = slope * motion + intercept per (strategy, n_prime)."""
    groups: Dict[Tuple[str, int], List[RunReportRow]] = defaultdict(list)
    for r in steady_rows(rows):
        groups[(r.strategy.value, r.n_prime)].append(r)
    table = []
    for (strategy, n_prime), members in sorted(groups.items()):
        xs = np.array([r.motion for r in members])
        ys = np.array([r.psnr_db for r in members])
        if len(members) < 2 or float(np.ptp(xs)) == 0.0:
            slope, intercept = 0.0, float(ys.mean())
        else:
            slope, intercept = (float(v) for v in np.polyfit(xs, ys, 1))
        table.append((strategy, n_prime, slope, intercept, len(members)))
    return table


def relative_improvement_table(rows: List[RunReportRow], n_prime: int, num_bins: int) -> List[Tuple]:
    """SeqDiff+ over SeqDiff relative PSNR gain per motion bin at one step count."""
    assignment, centers = motion_bins(rows, num_bins)
    means = _group_mean(
        [r for r in steady_rows(rows) if r.n_prime == n_prime and r.sequence_id in assignment],
        lambda r: (r.strategy, assignment[r.sequence_id]),
    )
    table = []
    for b, center in enumerate(centers):
        base = means.get((InitVariant.SEQDIFF, b))
        plus = means.get((InitVariant.SEQDIFF_PLUS, b))
        if base is None or plus is None:
            continue
        gain = 100.0 * (plus - base) / base if base else 0.0
        table.append((center, n_prime, base, plus, gain, REFERENCE_IMPROVEMENT_PCT))
    return table


def adaptive_policy(best_steps: List[Tuple], strategy: InitVariant, default: int = 4) -> AdaptiveStepPolicy:
    """Step policy for one strategy from the best-N'-per-motion table."""
    table = {motion_value: n for s, motion_value, n, _ in best_steps if s == strategy.value}
    if not table:
        raise ConfigurationError(f"best-step table has no entries for {strategy.value}")
    return AdaptiveStepPolicy.from_best_table(table, default=default)


class SweepResult(NamedTuple):
    rows: List[RunReportRow]
    psnr_vs_steps: List[Tuple]
    best_steps: List[Tuple]
    motion_fit: List[Tuple]
    relative_improvement: List[Tuple]
    score_evaluations: Dict[Tuple[str, int], List[int]]


class BenchService:
    """Metrics and sweep orchestration."""

    def make_observations(
        self,
        seq: Sequence,
        keep_fraction: float,
        mask_mode: MaskMode,
        seed: int,
        noise_std: float = 0.0,
    ) -> Tuple[List[Observation], List[LinearOperator]]:
        """Column-mask observations of every frame; one mask per sequence or per frame."""
        height, width = seq.shape
        operators: List[LinearOperator] = []
        observations: List[Observation] = []
        for t in range(seq.length):
            if mask_mode == MaskMode.PER_FRAME or not operators:
                mask_seed = derive_seed(seed, _MASK_STREAM, t if mask_mode == MaskMode.PER_FRAME else 0)
                op = measurement_service.make_column_mask(
                    width, keep_fraction, mask_seed, height=height, noise_std=noise_std, mask_id=f"{mask_seed:016x}"
                )
                operators.append(op)
            op = operators[-1]
            observations.append(
                measurement_service.observe(
                    op, seq.frames[t].double(), derive_seed(seed, _NOISE_STREAM, t), frame_index=t
                )
            )
        return observations, operators

    def reconstruct_rows(
        self,
        sequence_id: str,
        seq: Sequence,
        observations: List[Observation],
        variant: InitVariant,
        n_prime: StepChoice,
        score_model: ScoreModel,
        schedule: NoiseSchedule,
        guidance: GuidanceConfig,
        seed: int,
        transition_model: Optional[TransitionModel] = None,
        context_k: int = 4,
        record_wall_time: bool = True,
        label_n_prime: Optional[int] = None,
    ):
        result = sampler_service.reconstruct_sequence(
            observations,
            variant,
            score_model,
            schedule,
            guidance,
            derive_seed(seed, _SAMPLER_STREAM),
            n_prime=n_prime,
            transition_model=transition_model,
            context_k=context_k,
        )
        motions = motion(seq)
        rows = []
        for frame, record in zip(result.frames, result.records):
            t = record.frame_index
            rows.append(
                RunReportRow(
                    sequence_id=sequence_id,
                    frame=t,
                    strategy=variant,
                    n_prime=record.n_prime if label_n_prime is None else label_n_prime,
                    psnr_db=psnr(frame, seq.frames[t]),
                    motion=motions[t],
                    wall_s=record.wall_s if record_wall_time else 0.0,
                    seed=seed,
                    mask_id=record.mask_id,
                )
            )
        return result, rows

    def run_sweep(
        self,
        config: SweepConfig,
        score_model: ScoreModel,
        schedule: NoiseSchedule,
        transition_model: Optional[TransitionModel] = None,
        out_dir: Optional[Path] = None,
    ) -> SweepResult:
        """Every (split, motion level, sequence, strategy, N') cell; rows sorted canonically."""
        too_long = [n for n in config.n_prime_grid if n > schedule.steps_N]
        if too_long:
            raise ConfigurationError(f"N' grid entries {too_long} exceed N={schedule.steps_N}")
        if InitVariant.SEQDIFF_PLUS in config.strategies and config.transition == TransitionVariant.TUBELET:
            if transition_model is None:
                raise CheckpointError("seqdiffplus with tubelet-attention needs a transition checkpoint")
        if transition_model is None and config.transition != TransitionVariant.TUBELET:
            transition_model = transition_service.build(config.transition)
        guidance = config.guidance or GuidanceConfig(**get_guidance_config(analytic=False))

        rows: List[RunReportRow] = []
        evaluations: Dict[Tuple[str, int], List[int]] = defaultdict(list)
        with LogPerformance("run_sweep", splits=config.splits, strategies=len(config.strategies)):
            for split in range(config.splits):
                for j, level in enumerate(config.motion_levels):
                    for i in range(config.num_sequences):
                        sequence_id = f"s{split:02d}-m{j:02d}-q{i:03d}"
                        seed = derive_seed(config.master_seed, split, j, i)
                        seq = sequence_service.generate(
                            SequenceConfig(
                                kind=SequenceKind.BLOBS,
                                height=config.height,
                                width=config.width,
                                length=config.length,
                                motion_level=level,
                                num_blobs=config.num_blobs,
                                seed=seed,
                            )
                        )
                        observations, _ = self.make_observations(
                            seq, config.keep_fraction, config.mask_mode, seed, config.noise_std
                        )
                        for variant in config.strategies:
                            for n_prime in config.n_prime_grid:
                                result, cell_rows = self.reconstruct_rows(
                                    sequence_id,
                                    seq,
                                    observations,
                                    variant,
                                    n_prime,
                                    score_model,
                                    schedule,
                                    guidance,
                                    seed,
                                    transition_model=transition_model,
                                    context_k=config.context_k,
                                    record_wall_time=config.record_wall_time,
                                    label_n_prime=n_prime,
                                )
                                rows.extend(cell_rows)
                                evaluations[(variant.value, n_prime)].extend(
                                    r.score_evaluations for r in result.records if r.frame_index >= 1
                                )
                    logger.info(f"Split {split} motion level {level}: {config.num_sequences} sequences done")

        rows.sort(key=RunReportRow.sort_key)
        default_n = settings.default_n_prime if settings.default_n_prime in config.n_prime_grid else config.n_prime_grid[0]
        result = SweepResult(
            rows=rows,
            psnr_vs_steps=psnr_vs_steps_table(rows),
            best_steps=best_steps_table(rows, config.motion_bins),
            motion_fit=motion_fit_table(rows),
            relative_improvement=relative_improvement_table(rows, default_n, config.motion_bins),
            score_evaluations=dict(evaluations),
        )
        if out_dir is not None:
            self.write_sweep(result, Path(out_dir))
        LoggerUtils.log_experiment_event("sweep finished", rows=len(rows))
        return result

    def write_sweep(self, result: SweepResult, out_dir: Path) -> Dict[str, Path]:
        paths = {
            "report": report_repository.save(result.rows, out_dir / "sweep.csv"),
            "psnr_vs_steps": report_repository.write_table(
                out_dir / "psnr_vs_steps.csv",
                ("strategy", "n_prime", "mean_psnr_db", "split_std_db", "splits"),
                result.psnr_vs_steps,
            ),
            "best_steps": report_repository.write_table(
                out_dir / "best_steps.csv",
                ("strategy", "motion", "best_n_prime", "psnr_db"),
                result.best_steps,
            ),
            "motion_fit": report_repository.write_table(
                out_dir / "motion_fit.csv",
                ("strategy", "n_prime", "slope_db_per_motion", "intercept_db", "frames"),
                result.motion_fit,
            ),
            "relative_improvement": report_repository.write_table(
                out_dir / "relative_improvement.csv",
                ("motion", "n_prime", "seqdiff_psnr_db", "seqdiffplus_psnr_db", "improvement_pct", "reference_pct"),
                result.relative_improvement,
            ),
        }
        logger.info(f"Sweep reports written to {out_dir}")
        return paths


# Create a singleton instance
bench_service = BenchService()
