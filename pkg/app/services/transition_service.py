# app/services/transition_service.py
from abc import ABC, abstractmethod
import math
from typing import List, NamedTuple, Optional, Tuple

import torch
import torch.nn as nn
from loguru import logger

from app.config.runtime import derive_seed, make_generator
from app.models.enums import TransitionVariant
from app.models.transition import TubeletTransformer
from app.schemas.training import TrainConfig, TransitionSpec, TubeletConfig
from app.schemas.transition import HistoryBuffer
from app.services.diffusion_service import to_model_space
from app.utils.exceptions import ConfigurationError, MissingContextError, NumericalDivergenceError, ShapeMismatchError
from app.utils.logger.setup import LogPerformance


class TransitionModel(ABC):
    """Predicts the next model-space frame from a history of past frames."""

    variant: TransitionVariant

    def predict(self, history: HistoryBuffer) -> torch.Tensor:
        if len(history) == 0:
            raise MissingContextError("cannot predict from an empty history")
        out = self._predict(history)
        if not bool(torch.isfinite(out).all()):
            raise NumericalDivergenceError("transition prediction is not finite")
        return out

    @abstractmethod
    def _predict(self, history: HistoryBuffer) -> torch.Tensor:
        ...


class IdentityTransition(TransitionModel):
    """The last frame unchanged; SeqDiff's implicit model."""

    variant = TransitionVariant.IDENTITY

    def _predict(self, history: HistoryBuffer) -> torch.Tensor:
        return history.last()[0]


class LinearExtrapolation(TransitionModel):
    """Constant velocity: x^t + (x^t - x^{t-1}), clamped to [-1, 1]."""

    variant = TransitionVariant.LINEAR

    def _predict(self, history: HistoryBuffer) -> torch.Tensor:
        if len(history) < 2:
            return history.last()[0]
        prev, last = history.last(2)
        return (2.0 * last - prev).clamp(-1.0, 1.0)


class TubeletAttentionTransition(TransitionModel):
    variant = TransitionVariant.TUBELET

    def __init__(self, model: TubeletTransformer):
        self.model = model

    def _predict(self, history: HistoryBuffer) -> torch.Tensor:
        spec = self.model.spec
        if history.capacity != spec.context_k:
            raise ConfigurationError(f"history capacity {history.capacity} != model context K={spec.context_k}")
        volume = history.padded()
        self.model.eval()
        with torch.no_grad():
            return self.model(volume.unsqueeze(0)).squeeze(0)


def tubelet_embed(
    frames: torch.Tensor, config: TubeletConfig, model: Optional[TubeletTransformer] = None
) -> torch.Tensor:
    """Tokens (num_tokens, embed_dim) of a (K, H, W) frame stack.

    Without ``model`` a freshly initialized embedding for this volume is used.
    """
    if frames.dim() != 3:
        raise ShapeMismatchError(f"expected a (K, H, W) stack, got {tuple(frames.shape)}")
    k, height, width = frames.shape
    try:
        config.validate_volume(k, height, width)
    except ValueError as e:
        raise ConfigurationError(str(e)) from e
    if model is None:
        model = TubeletTransformer(TransitionSpec(context_k=k, height=height, width=width, tubelet=config))
    return model.embed(frames.unsqueeze(0).to(model.patch_embed.weight.dtype)).squeeze(0)


def make_windows(sequences: List[torch.Tensor], context_k: int) -> Tuple[torch.Tensor, torch.Tensor]:
    """All (K clean frames, next frame) pairs, model space. Sequences are (L, H, W) data space."""
    inputs, targets = [], []
    for i, seq in enumerate(sequences):
        if seq.shape[0] <= context_k:
            raise ConfigurationError(f"training sequence {i} has {seq.shape[0]} frames, needs more than K={context_k}")
        z = to_model_space(seq)
        for t in range(context_k, seq.shape[0]):
            inputs.append(z[t - context_k:t])
            targets.append(z[t])
    return torch.stack(inputs), torch.stack(targets)


class TransitionTrainResult(NamedTuple):
    model: nn.Module
    losses: List[float]


class TransitionService:
    def build(self, variant: TransitionVariant, model: Optional[TubeletTransformer] = None) -> TransitionModel:
        if variant == TransitionVariant.IDENTITY:
            return IdentityTransition()
        if variant == TransitionVariant.LINEAR:
            return LinearExtrapolation()
        if model is None:
            raise ConfigurationError("tubelet-attention needs a trained model")
        return TubeletAttentionTransition(model)

    def train_transition(
        self, model: TubeletTransformer, sequences: List[torch.Tensor], config: TrainConfig
    ) -> TransitionTrainResult:
        """Minimize next-frame MSE on clean K-frame windows."""
        inputs, targets = make_windows(sequences, model.spec.context_k)
        dtype = model.patch_embed.weight.dtype
        inputs, targets = inputs.to(dtype), targets.to(dtype)
        losses: List[float] = []
        if config.iterations == 0:
            return TransitionTrainResult(model, losses)

        optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
        gen = make_generator(derive_seed(config.seed, 2))
        model.train()
        with LogPerformance("train_transition", iterations=config.iterations, windows=int(inputs.shape[0])):
            for it in range(config.iterations):
                idx = torch.randint(inputs.shape[0], (config.batch_size,), generator=gen)
                loss = (model(inputs[idx]) - targets[idx]).pow(2).mean()
                value = float(loss.detach())
                if not math.isfinite(value):
                    logger.error(f"Non-finite transition loss at iteration {it}")
                    raise NumericalDivergenceError("non-finite transition loss", step_index=it)
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                losses.append(value)
                if (it + 1) % config.log_every == 0:
                    window = losses[-config.log_every:]
                    logger.info(f"train_transition iteration {it + 1}/{config.iterations}: loss {sum(window) / len(window):.6f}")
        model.eval()
        return TransitionTrainResult(model, losses)

    def evaluate_mse(self, predictor: TransitionModel, sequences: List[torch.Tensor], context_k: int) -> float:
        """Mean next-frame MSE over every clean window of held-out sequences."""
        inputs, targets = make_windows(sequences, context_k)
        total = 0.0
        for window, target in zip(inputs, targets):
            history = HistoryBuffer(context_k)
            for frame in window:
                history.push(frame)
            total += float((predictor.predict(history).to(target.dtype) - target).pow(2).mean())
        return total / len(targets)


# Create a singleton instance
transition_service = TransitionService()
