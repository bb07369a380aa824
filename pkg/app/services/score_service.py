# app/services/score_service.py
from abc import ABC, abstractmethod
import math
from typing import Callable, List, NamedTuple, Union

import torch
import torch.nn as nn
from loguru import logger

from app.config.runtime import derive_seed, make_generator
from app.config.settings import settings
from app.models.denoiser import DenoiserNet
from app.schemas.diffusion import NoiseSchedule, Rates
from app.schemas.priors import GaussianPrior
from app.schemas.training import TrainConfig
from app.services.diffusion_service import rates_batch
from app.utils.exceptions import ConfigurationError, NumericalDivergenceError, ShapeMismatchError
from app.utils.logger.setup import LogPerformance

NoisePredictor = Union[nn.Module, Callable[[torch.Tensor, torch.Tensor], torch.Tensor]]


class ScoreModel(ABC):
    """Evaluates grad log p(x_tau) for fields of any leading batch shape.

    Every sampler evaluation increments ``evaluations`` so samplers can account for
    their step budget; evaluations made inside DPS guidance count separately.
    """

    supports_exact_linearization: bool = False

    def __init__(self):
        self.evaluations = 0
        self.guidance_evaluations = 0

    def __call__(self, x_tau: torch.Tensor, tau: float, rates: Rates) -> torch.Tensor:
        self.evaluations += 1
        with torch.no_grad():
            return self.score(x_tau, tau, rates)

    def for_guidance(self, x_tau: torch.Tensor, tau: float, rates: Rates) -> torch.Tensor:
        """Differentiable evaluation used by the exact-linearization guidance."""
        self.guidance_evaluations += 1
        return self.score(x_tau, tau, rates)

    @abstractmethod
    def score(self, x_tau: torch.Tensor, tau: float, rates: Rates) -> torch.Tensor:
        ...

    def reset_counter(self) -> int:
        count, self.evaluations = self.evaluations, 0
        self.guidance_evaluations = 0
        return count


class AnalyticGaussianScore(ScoreModel):
    """Exact score of a Gaussian prior diffused to time tau."""

    supports_exact_linearization = True

    def __init__(self, prior: GaussianPrior):
        super().__init__()
        self.prior = prior

    def score(self, x_tau: torch.Tensor, tau: float, rates: Rates) -> torch.Tensor:
        return analytic_score(self.prior, x_tau, rates)


class NetworkScore(ScoreModel):
    """Score recovered from a noise predictor as s = -eps_hat / sigma."""

    def __init__(self, model: DenoiserNet, exact_linearization: bool = False):
        super().__init__()
        self.model = model
        self.supports_exact_linearization = exact_linearization

    def score(self, x_tau: torch.Tensor, tau: float, rates: Rates) -> torch.Tensor:
        if rates.sigma <= 0:
            raise ConfigurationError("network score is undefined at sigma = 0")
        return -self.model(x_tau, torch.tensor(tau, dtype=x_tau.dtype)) / rates.sigma


def _flatten_event(prior: GaussianPrior, x: torch.Tensor) -> torch.Tensor:
    event = prior.event_shape
    if tuple(x.shape[x.dim() - len(event):]) != event:
        raise ShapeMismatchError(f"field shape {tuple(x.shape)} does not end with prior shape {event}")
    return x.reshape(x.shape[: x.dim() - len(event)] + (prior.dim,))


def analytic_score(prior: GaussianPrior, x_tau: torch.Tensor, rates: Rates) -> torch.Tensor:
    """-(alpha^2 Sigma + sigma^2 I)^-1 (x_tau - alpha mu)."""
    xf = _flatten_event(prior, x_tau)
    centered = xf - rates.alpha * prior.mean.reshape(-1).to(xf.dtype)
    a2, s2 = rates.alpha ** 2, rates.sigma ** 2
    if prior.is_diagonal:
        out = -centered / (a2 * prior.covariance.to(xf.dtype) + s2)
    else:
        cov = prior.covariance.to(xf.dtype)
        precision_system = a2 * cov + s2 * torch.eye(prior.dim, dtype=xf.dtype)
        out = -torch.linalg.solve(precision_system, centered.unsqueeze(-1)).squeeze(-1)
    return out.reshape(x_tau.shape)


def gaussian_log_density(prior: GaussianPrior, x_tau: torch.Tensor, rates: Rates) -> torch.Tensor:
    """log N(x_tau; alpha mu, alpha^2 Sigma + sigma^2 I), used as a finite-difference oracle."""
    xf = _flatten_event(prior, x_tau)
    cov = rates.alpha ** 2 * prior.dense_covariance().to(xf.dtype) + rates.sigma ** 2 * torch.eye(prior.dim, dtype=xf.dtype)
    dist = torch.distributions.MultivariateNormal(rates.alpha * prior.mean.reshape(-1).to(xf.dtype), covariance_matrix=cov)
    return dist.log_prob(xf)


def gaussian_conditional_mean(prior: GaussianPrior, x_tau: torch.Tensor, rates: Rates) -> torch.Tensor:
    """E[x0 | x_tau] = mu + alpha Sigma (alpha^2 Sigma + sigma^2 I)^-1 (x_tau - alpha mu)."""
    xf = _flatten_event(prior, x_tau)
    mu = prior.mean.reshape(-1).to(xf.dtype)
    cov = prior.dense_covariance().to(xf.dtype)
    system = rates.alpha ** 2 * cov + rates.sigma ** 2 * torch.eye(prior.dim, dtype=xf.dtype)
    gain = rates.alpha * cov @ torch.linalg.inv(system)
    out = mu + (xf - rates.alpha * mu) @ gain.T
    return out.reshape(x_tau.shape)


def gaussian_posterior_mean(
    prior: GaussianPrior, mask: torch.Tensor, y: torch.Tensor, noise_std: float = 0.0
) -> torch.Tensor:
    """Exact E[x0 | y] for y = x0[mask] + noise under a Gaussian prior (model-space y)."""
    mu = prior.mean.reshape(-1).to(y.dtype)
    cov = prior.dense_covariance().to(y.dtype)
    kept = mask.reshape(-1)
    cross = cov[:, kept]
    system = cov[kept][:, kept] + (noise_std ** 2 + 1e-12) * torch.eye(int(kept.sum()), dtype=y.dtype)
    out = mu + (y - mu[kept]) @ torch.linalg.solve(system, cross.T)
    return out.reshape(y.shape[:-1] + prior.event_shape)


def tweedie_estimate(x_tau: torch.Tensor, rates: Rates, score: torch.Tensor) -> torch.Tensor:
    """Posterior-mean approximation (x_tau + sigma^2 score) / alpha."""
    if x_tau.shape != score.shape:
        raise ShapeMismatchError(f"x_tau shape {tuple(x_tau.shape)} != score shape {tuple(score.shape)}")
    if rates.alpha <= 0:
        raise ConfigurationError("Tweedie estimate needs alpha > 0")
    return (x_tau + rates.sigma ** 2 * score) / rates.alpha


def tweedie_from_noise(x_tau: torch.Tensor, rates: Rates, eps_hat: torch.Tensor) -> torch.Tensor:
    """Same estimate written in the noise parameterization: (x_tau - sigma eps_hat) / alpha."""
    if rates.alpha <= 0:
        raise ConfigurationError("Tweedie estimate needs alpha > 0")
    return (x_tau - rates.sigma * eps_hat) / rates.alpha


def dsm_loss(
    model: NoisePredictor,
    x0_batch: torch.Tensor,
    schedule: NoiseSchedule,
    seed: int,
    tau_floor_fraction: float = 1e-3,
) -> torch.Tensor:
    """Mean over the batch of ||eps_hat - eps||^2 with tau ~ U[tau_floor, T]."""
    if x0_batch.dim() == 0 or x0_batch.shape[0] == 0:
        raise ConfigurationError("dsm_loss needs a nonempty batch")
    gen = make_generator(seed)
    batch = x0_batch.shape[0]
    floor = tau_floor_fraction * schedule.horizon_T
    taus = floor + (schedule.horizon_T - floor) * torch.rand(batch, generator=gen, dtype=x0_batch.dtype)
    eps = torch.randn(x0_batch.shape, generator=gen, dtype=x0_batch.dtype)
    alpha, sigma = rates_batch(schedule, taus)
    view = (batch,) + (1,) * (x0_batch.dim() - 1)
    x_tau = alpha.reshape(view) * x0_batch + sigma.reshape(view) * eps
    eps_hat = model(x_tau, taus)
    return (eps_hat - eps).pow(2).reshape(batch, -1).sum(dim=1).mean()


class TrainResult(NamedTuple):
    model: nn.Module
    losses: List[float]


class ScoreService:
    def __init__(self, tau_floor_fraction: float = 1e-3):
        self.tau_floor_fraction = tau_floor_fraction

    def train_score(
        self,
        model: DenoiserNet,
        dataset: torch.Tensor,
        schedule: NoiseSchedule,
        config: TrainConfig,
    ) -> TrainResult:
        """Adam on dsm_loss; dataset is (M, H, W) in model space."""
        if dataset.shape[0] == 0:
            raise ConfigurationError("training dataset is empty")
        losses: List[float] = []
        if config.iterations == 0:
            return TrainResult(model, losses)

        optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
        batch_gen = make_generator(derive_seed(config.seed, 0))
        model.train()
        with LogPerformance("train_score", iterations=config.iterations, samples=int(dataset.shape[0])):
            for it in range(config.iterations):
                idx = torch.randint(dataset.shape[0], (config.batch_size,), generator=batch_gen)
                loss = dsm_loss(
                    model, dataset[idx], schedule, derive_seed(config.seed, 1, it), self.tau_floor_fraction
                )
                value = float(loss.detach())
                if not math.isfinite(value):
                    logger.error(f"Non-finite DSM loss at iteration {it}")
                    raise NumericalDivergenceError("non-finite DSM loss", step_index=it)
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                losses.append(value)
                if (it + 1) % config.log_every == 0:
                    window = losses[-config.log_every:]
                    logger.info(f"train_score iteration {it + 1}/{config.iterations}: loss {sum(window) / len(window):.4f}")
        model.eval()
        return TrainResult(model, losses)

    def network_score(self, model: DenoiserNet, exact_linearization: bool = False) -> NetworkScore:
        return NetworkScore(model, exact_linearization=exact_linearization)

    def analytic_score_model(self, prior: GaussianPrior) -> AnalyticGaussianScore:
        return AnalyticGaussianScore(prior)


# Create a singleton instance
score_service = ScoreService(tau_floor_fraction=settings.tau_floor_fraction)
