# app/services/sampler_service.py
import math
import time
from typing import Dict, List, Optional, Sequence, Union

import torch
from loguru import logger

from app.config.runtime import derive_seed, make_generator
from app.models.enums import InitVariant, JacobianMode, Normalization
from app.schemas.diffusion import NoiseSchedule, Rates
from app.schemas.measurement import LinearOperator, Observation
from app.schemas.sampling import (
    AdaptiveStepPolicy,
    FrameRecord,
    GuidanceConfig,
    InitStrategy,
    ReconstructionResult,
    TrajectoryState,
)
from app.schemas.transition import HistoryBuffer
from app.services.diffusion_service import init_steps, rates_at, to_data_space, to_model_space
from app.services.measurement_service import measurement_service
from app.services.score_service import ScoreModel, tweedie_estimate
from app.utils.exceptions import (
    ConfigurationError,
    MissingContextError,
    NumericalDivergenceError,
    ShapeMismatchError,
)
from app.utils.logger.logger_config import LoggerUtils

StepChoice = Union[int, Dict[InitVariant, int], AdaptiveStepPolicy]


def _init_mean(strategy: InitStrategy, shape: Optional[torch.Size]) -> torch.Tensor:
    variant = strategy.variant
    if variant == InitVariant.VANILLA:
        if shape is None:
            raise MissingContextError("vanilla initialization needs a frame shape")
        return torch.zeros(shape, dtype=torch.float64)
    if variant == InitVariant.CCDF:
        if strategy.observation is None:
            raise MissingContextError("CCDF initialization needs the current observation")
        obs = strategy.observation
        return to_model_space(measurement_service.adjoint_fill(obs.operator, obs.values.to(torch.float64)))
    if variant == InitVariant.SEQDIFF:
        if strategy.previous is None:
            raise MissingContextError("SeqDiff initialization needs the previous posterior estimate")
        return strategy.previous.to(torch.float64)
    if strategy.transition is None or strategy.history is None or len(strategy.history) == 0:
        raise MissingContextError("SeqDiff+ initialization needs a transition model and a nonempty history")
    return strategy.transition.predict(strategy.history).to(torch.float64)


def make_init(
    strategy: InitStrategy, schedule: NoiseSchedule, seed: int, shape: Optional[torch.Size] = None
) -> TrajectoryState:
    """Sample x_tau' ~ N(alpha mu_init, sigma^2 I) at the grid time tau' = N' T / N.

    ``shape`` is only needed by Vanilla, whose mean carries no shape of its own.
    """
    if strategy.variant == InitVariant.VANILLA:
        if strategy.tau_prime is not None and not math.isclose(strategy.tau_prime, schedule.horizon_T):
            raise ConfigurationError(f"vanilla starts at the horizon {schedule.horizon_T}, got {strategy.tau_prime}")
        n_prime = strategy.n_steps or schedule.steps_N
        if n_prime > schedule.steps_N:
            raise ConfigurationError(f"vanilla step count {n_prime} exceeds N={schedule.steps_N}")
        step_size = schedule.horizon_T / n_prime
    else:
        n_prime = init_steps(schedule, strategy.tau_prime)
        step_size = schedule.step_size

    mean = _init_mean(strategy, shape)
    generator = make_generator(seed)
    if n_prime == 0:
        return TrajectoryState(x=mean.clone(), step_index=0, step_size=step_size, generator=generator, estimate=mean)

    rates = rates_at(schedule, n_prime * step_size)
    noise = torch.randn(mean.shape, generator=generator, dtype=mean.dtype)
    x = rates.alpha * mean + rates.sigma * noise
    return TrajectoryState(x=x, step_index=n_prime, step_size=step_size, generator=generator, estimate=mean)


def _residual(op: LinearOperator, y: Observation, x0_hat: torch.Tensor) -> torch.Tensor:
    # observations are data space; selection operators commute with z = 2y - 1
    y_model = to_model_space(y.values.to(x0_hat.dtype))
    return y_model - measurement_service.apply_forward(op, x0_hat)


def dps_gradient(
    op: LinearOperator,
    y: Observation,
    x_tau: torch.Tensor,
    score_model: ScoreModel,
    rates: Rates,
    config: GuidanceConfig,
    tau: float = 0.0,
    score: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Guidance field to ADD to a reverse step; it decreases ||y - A x0_hat||^2.

    The direction is -grad ||r||^2. Under identity-approximation the Jacobian of x0_hat
    is replaced by I / alpha, giving 2 A^T r / alpha. ``score`` may pass an already
    evaluated score at x_tau for the identity-approximation path.
    """
    if config.jacobian_mode == JacobianMode.EXACT:
        if not score_model.supports_exact_linearization:
            raise ConfigurationError("this score model does not support exact linearization")
        with torch.enable_grad():
            x_req = x_tau.detach().clone().requires_grad_(True)
            x0_hat = tweedie_estimate(x_req, rates, score_model.for_guidance(x_req, tau, rates))
            residual = _residual(op, y, x0_hat)
            loss = residual.pow(2).sum()
            (grad,) = torch.autograd.grad(loss, x_req)
        direction = -grad.detach()
        residual = residual.detach()
    else:
        if score is None:
            score = score_model(x_tau, tau, rates)
        x0_hat = tweedie_estimate(x_tau, rates, score)
        residual = _residual(op, y, x0_hat)
        # same scale as the exact mode: -grad ||r||^2 with J = I / alpha
        direction = 2.0 * measurement_service.apply_adjoint(op, residual) / rates.alpha

    if config.normalization == Normalization.RESIDUAL_NORM:
        norm = float(residual.norm())
        if norm == 0.0:
            return torch.zeros_like(x_tau)
        zeta = config.zeta_scale / norm
    else:
        zeta = config.zeta_scale
    return zeta * direction


def reverse_step(
    state: TrajectoryState,
    score_model: ScoreModel,
    guidance: Optional[torch.Tensor],
    schedule: NoiseSchedule,
    score: Optional[torch.Tensor] = None,
) -> TrajectoryState:
    """One Euler-Maruyama step of the reverse SDE from tau to tau - step_size."""
    if state.step_index <= 0:
        raise ConfigurationError("trajectory has no remaining steps")
    tau = state.tau
    rates = rates_at(schedule, tau)
    beta = schedule.beta(tau)
    dt = state.step_size
    if score is None:
        score = score_model(state.x, tau, rates)

    x = state.x + (0.5 * beta * state.x + beta * score) * dt
    if state.step_index > 1:
        z = torch.randn(state.x.shape, generator=state.generator, dtype=state.x.dtype)
        x = x + math.sqrt(beta * dt) * z
    if guidance is not None:
        x = x + guidance

    if not bool(torch.isfinite(x).all()):
        LoggerUtils.log_numerical_event("reverse step diverged", severity="ERROR", step_index=state.step_index)
        raise NumericalDivergenceError("non-finite state in reverse step", step_index=state.step_index)

    estimate = tweedie_estimate(state.x, rates, score) if rates.alpha > 0 else state.estimate
    return state.model_copy(update={"x": x, "step_index": state.step_index - 1, "estimate": estimate})


def run_trajectory(
    init: TrajectoryState,
    score_model: ScoreModel,
    schedule: NoiseSchedule,
    observation: Optional[Observation] = None,
    guidance_config: Optional[GuidanceConfig] = None,
) -> torch.Tensor:
    """Run the remaining reverse steps and return the data-space posterior estimate.

    The output is the Tweedie estimate of the last step taken at the guided state
    x_tau + guidance, so the final measurement update reaches the reconstruction.
    Exactly ``init.step_index`` sampler evaluations happen; the exact-linearization
    re-evaluation counts as a guidance evaluation.
    """
    guidance_config = guidance_config or GuidanceConfig()
    state = init
    while state.step_index > 0:
        tau = state.tau
        rates = rates_at(schedule, tau)
        score = score_model(state.x, tau, rates)
        guidance = None
        if observation is not None:
            guidance = dps_gradient(
                observation.operator, observation, state.x, score_model, rates, guidance_config, tau=tau, score=score
            )
        previous = state.x
        state = reverse_step(state, score_model, guidance, schedule, score=score)
        if state.step_index == 0 and guidance is not None and rates.alpha > 0:
            estimate = _guided_estimate(previous, guidance, score, score_model, rates, tau, guidance_config)
            state = state.model_copy(update={"estimate": estimate})
    return to_data_space(state.estimate)


def _guided_estimate(
    x_tau: torch.Tensor,
    guidance: torch.Tensor,
    score: torch.Tensor,
    score_model: ScoreModel,
    rates: Rates,
    tau: float,
    config: GuidanceConfig,
) -> torch.Tensor:
    """Tweedie estimate at x_tau + guidance.

    Exact linearization re-scores the guided state; identity-approximation keeps the
    step's score, which shifts the estimate by guidance / alpha.
    """
    guided = x_tau + guidance
    if config.jacobian_mode == JacobianMode.EXACT:
        with torch.no_grad():
            score = score_model.for_guidance(guided, tau, rates)
    estimate = tweedie_estimate(guided, rates, score)
    if not bool(torch.isfinite(estimate).all()):
        LoggerUtils.log_numerical_event("guided estimate diverged", severity="ERROR", step_index=1)
        raise NumericalDivergenceError("non-finite guided estimate", step_index=1)
    return estimate


def _motion_between(frames: Sequence[torch.Tensor]) -> Optional[float]:
    if len(frames) < 2:
        return None
    # model space differences are twice the data space ones
    return float((frames[-1] - frames[-2]).abs().mean()) / 2.0


def _steps_for(choice: StepChoice, variant: InitVariant, history: HistoryBuffer) -> int:
    if isinstance(choice, AdaptiveStepPolicy):
        return choice.choose(_motion_between(history.frames()))
    if isinstance(choice, dict):
        if variant not in choice:
            raise ConfigurationError(f"no step count configured for {variant.value}")
        return choice[variant]
    return choice


class SamplerService:
    """Frame-by-frame sequence reconstruction with trajectory reuse."""

    def reconstruct_sequence(
        self,
        observations: List[Observation],
        variant: InitVariant,
        score_model: ScoreModel,
        schedule: NoiseSchedule,
        guidance_config: GuidanceConfig,
        seed: int,
        n_prime: StepChoice = 4,
        transition_model=None,
        context_k: int = 4,
    ) -> ReconstructionResult:
        """Reconstruct every frame; frames lacking context fall back to full Vanilla.

        ``n_prime`` is one step count, a per-strategy mapping, or an adaptive policy.
        Frame t draws from the private stream derive_seed(seed, t).
        """
        if not observations:
            raise ConfigurationError("observations must be nonempty")
        if variant == InitVariant.SEQDIFF_PLUS and transition_model is None:
            raise ConfigurationError("seqdiffplus needs a transition model")
        shape = observations[0].operator.shape
        order = [o.frame_index for o in observations]
        if order != sorted(order):
            raise ConfigurationError("observations must be ordered by frame index")

        history = HistoryBuffer(context_k)
        frames: List[torch.Tensor] = []
        records: List[FrameRecord] = []
        for obs in observations:
            if obs.operator.shape != shape:
                raise ShapeMismatchError(f"frame {obs.frame_index} operator shape {obs.operator.shape} != {shape}")
            steps = _steps_for(n_prime, variant, history)
            strategy = self._strategy_for(variant, steps, schedule, obs, history, transition_model)
            try:
                init = make_init(strategy, schedule, derive_seed(seed, obs.frame_index), shape=torch.Size(shape))
            except MissingContextError as e:
                logger.debug(f"Frame {obs.frame_index}: {e.message}; falling back to vanilla")
                strategy = InitStrategy(variant=InitVariant.VANILLA)
                init = make_init(strategy, schedule, derive_seed(seed, obs.frame_index), shape=torch.Size(shape))

            score_model.reset_counter()
            start = time.perf_counter()
            estimate = run_trajectory(init, score_model, schedule, obs, guidance_config)
            wall = time.perf_counter() - start

            frames.append(estimate)
            history.push(to_model_space(estimate), obs.frame_index)
            records.append(
                FrameRecord(
                    frame_index=obs.frame_index,
                    strategy=strategy.variant,
                    n_prime=init.step_index,
                    score_evaluations=score_model.evaluations,
                    wall_s=wall,
                    mask_id=obs.operator.mask_id,
                )
            )
        logger.debug(f"Reconstructed {len(frames)} frames with {variant.value}")
        return ReconstructionResult(frames=frames, records=records)

    def _strategy_for(
        self,
        variant: InitVariant,
        steps: int,
        schedule: NoiseSchedule,
        obs: Observation,
        history: HistoryBuffer,
        transition_model,
    ) -> InitStrategy:
        if steps > schedule.steps_N:
            raise ConfigurationError(f"N'={steps} exceeds N={schedule.steps_N}")
        if variant == InitVariant.VANILLA:
            return InitStrategy(variant=variant, n_steps=steps)
        # the first frame of every warm-started strategy is a full Vanilla run
        if len(history) == 0:
            return InitStrategy(variant=InitVariant.VANILLA)
        tau_prime = schedule.tau_at(steps) if steps >= 1 else schedule.step_size / 4
        if variant == InitVariant.CCDF:
            return InitStrategy(variant=variant, tau_prime=tau_prime, observation=obs)
        if variant == InitVariant.SEQDIFF:
            return InitStrategy(variant=variant, tau_prime=tau_prime, previous=history.last()[0])
        return InitStrategy(variant=variant, tau_prime=tau_prime, transition=transition_model, history=history)


# Create a singleton instance
sampler_service = SamplerService()
