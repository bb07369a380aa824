import math

import pytest
import torch

from app.config.runtime import derive_seed, make_generator
from app.models.enums import InitVariant, JacobianMode, MaskMode, Normalization
from app.schemas.diffusion import Rates
from app.schemas.priors import GaussianPrior
from app.schemas.sampling import AdaptiveStepPolicy, GuidanceConfig, InitStrategy, TrajectoryState
from app.services.bench_service import bench_service
from app.services.diffusion_service import rates_at, to_data_space, to_model_space
from app.services.measurement_service import measurement_service as ms
from app.services.sampler_service import dps_gradient, make_init, reverse_step, run_trajectory, sampler_service
from app.services.score_service import (
    AnalyticGaussianScore,
    NetworkScore,
    ScoreModel,
    gaussian_posterior_mean,
    tweedie_estimate,
)
from app.services.transition_service import IdentityTransition
from app.utils.exceptions import ConfigurationError, MissingContextError, NumericalDivergenceError

EXACT_PLAIN = GuidanceConfig(zeta_scale=0.5, normalization=Normalization.NONE, jacobian_mode=JacobianMode.EXACT)


class ZeroScore(ScoreModel):
    def score(self, x_tau, tau, rates):
        return torch.zeros_like(x_tau)


class ExplodingScore(ScoreModel):
    def score(self, x_tau, tau, rates):
        return torch.full_like(x_tau, float("inf"))


def _state(x, step_index, step_size=0.01, seed=0):
    return TrajectoryState(x=x, step_index=step_index, step_size=step_size, generator=make_generator(seed), estimate=x)


def _field_prior(height, width, variance=0.2):
    d = height * width
    return GaussianPrior(
        mean=torch.zeros(height, width, dtype=torch.float64), covariance=torch.full((d,), variance, dtype=torch.float64)
    )


def _observations(seq, seed=3, keep_fraction=0.25):
    observations, _ = bench_service.make_observations(seq, keep_fraction, MaskMode.FIXED, seed)
    return observations


# --- initialization ---------------------------------------------------------

def test_vanilla_init_is_base_draw(schedule):
    state = make_init(InitStrategy(variant=InitVariant.VANILLA), schedule, seed=1, shape=torch.Size((10_000, 4)))
    assert state.step_index == schedule.steps_N
    assert state.tau == pytest.approx(schedule.horizon_T)
    sigma = rates_at(schedule, schedule.horizon_T).sigma
    assert float(state.x.mean(dim=0).abs().max()) < 4 * sigma / 100
    assert torch.allclose(state.x.var(dim=0), torch.full((4,), sigma ** 2, dtype=torch.float64), rtol=0.05)


def test_vanilla_reduced_grid(schedule):
    state = make_init(InitStrategy(variant=InitVariant.VANILLA, n_steps=8), schedule, seed=1, shape=torch.Size((2, 2)))
    assert state.step_index == 8
    assert state.step_size == pytest.approx(schedule.horizon_T / 8)
    with pytest.raises(ConfigurationError):
        make_init(InitStrategy(variant=InitVariant.VANILLA, n_steps=101), schedule, seed=1, shape=torch.Size((2, 2)))


def test_seqdiff_init_moments(schedule):
    mu = torch.tensor([0.5, -0.25, 0.0, 0.8], dtype=torch.float64)
    previous = mu.expand(10_000, 4).clone()
    tau_prime = schedule.tau_at(4)
    state = make_init(InitStrategy(variant=InitVariant.SEQDIFF, tau_prime=tau_prime, previous=previous), schedule, seed=2)
    r = rates_at(schedule, tau_prime)
    assert state.step_index == 4
    assert float((state.x.mean(dim=0) - r.alpha * mu).abs().max()) < 4 * r.sigma / 100
    assert torch.allclose(state.x.var(dim=0), torch.full((4,), r.sigma ** 2, dtype=torch.float64), rtol=0.05)


def test_ccdf_init_centres_on_filled_observation(schedule):
    frame = torch.rand(6, 6, generator=torch.Generator().manual_seed(0), dtype=torch.float64)
    op = ms.make_column_mask(6, 0.5, seed=4)
    obs = ms.observe(op, frame, seed=0)
    tiny = schedule.step_size / 4
    state = make_init(InitStrategy(variant=InitVariant.CCDF, tau_prime=tiny, observation=obs), schedule, seed=0)
    assert state.step_index == 0
    assert torch.allclose(state.x, to_model_space(ms.adjoint_fill(op, obs.values)))


def test_zero_step_trajectory_returns_init_mean(schedule):
    previous = torch.tensor([[0.5, -0.5], [0.0, 1.0]], dtype=torch.float64)
    strategy = InitStrategy(variant=InitVariant.SEQDIFF, tau_prime=schedule.step_size / 4, previous=previous)
    state = make_init(strategy, schedule, seed=0)
    model = ZeroScore()
    out = run_trajectory(state, model, schedule)
    assert torch.equal(out, to_data_space(previous))
    assert model.evaluations == 0


def test_missing_context_is_reported(schedule):
    with pytest.raises(MissingContextError):
        make_init(InitStrategy(variant=InitVariant.SEQDIFF, tau_prime=0.04), schedule, seed=0)
    with pytest.raises(MissingContextError):
        make_init(InitStrategy(variant=InitVariant.VANILLA), schedule, seed=0)


def test_strategy_validation():
    with pytest.raises(ValueError):
        InitStrategy(variant=InitVariant.SEQDIFF)
    with pytest.raises(ValueError):
        InitStrategy(variant=InitVariant.CCDF, tau_prime=0.04, n_steps=4)


# --- reverse step -----------------------------------------------------------

def test_drift_only_last_step(schedule):
    x = torch.tensor([1.0, -2.0, 0.5], dtype=torch.float64)
    out = reverse_step(_state(x, 1), ZeroScore(), None, schedule)
    beta = schedule.beta(0.01)
    assert out.step_index == 0
    assert torch.allclose(out.x, x * (1 + 0.5 * beta * 0.01), atol=1e-15)


def test_last_step_injects_no_noise(schedule):
    x = torch.tensor([0.3, 0.1], dtype=torch.float64)
    a = reverse_step(_state(x, 1, seed=1), ZeroScore(), None, schedule)
    b = reverse_step(_state(x, 1, seed=2), ZeroScore(), None, schedule)
    assert torch.equal(a.x, b.x)


def test_guidance_is_added_after_update(schedule):
    x = torch.zeros(3, dtype=torch.float64)
    guidance = torch.tensor([0.1, 0.2, 0.3], dtype=torch.float64)
    out = reverse_step(_state(x, 1), ZeroScore(), guidance, schedule)
    assert torch.allclose(out.x, guidance)


def test_divergence_carries_step_index(schedule):
    with pytest.raises(NumericalDivergenceError) as info:
        reverse_step(_state(torch.zeros(2, dtype=torch.float64), 7), ExplodingScore(), None, schedule)
    assert info.value.step_index == 7
    with pytest.raises(ConfigurationError):
        reverse_step(_state(torch.zeros(2, dtype=torch.float64), 0), ZeroScore(), None, schedule)


def test_unconditional_unit_gaussian_is_stationary(schedule):
    prior = GaussianPrior(mean=torch.zeros(4, dtype=torch.float64), covariance=torch.ones(4, dtype=torch.float64))
    model = AnalyticGaussianScore(prior)
    state = make_init(InitStrategy(variant=InitVariant.VANILLA), schedule, seed=5, shape=torch.Size((10_000, 4)))
    while state.step_index > 0:
        state = reverse_step(state, model, None, schedule)
    assert float(state.x.mean(dim=0).abs().max()) < 0.05
    variance = state.x.var(dim=0)
    assert bool(((variance > 0.9) & (variance < 1.1)).all())
    assert model.evaluations == schedule.steps_N


# --- guidance ---------------------------------------------------------------

def _guidance_case(gen, schedule):
    prior = GaussianPrior(
        mean=0.3 * torch.randn(4, 4, generator=gen, dtype=torch.float64),
        covariance=0.1 + torch.rand(16, generator=gen, dtype=torch.float64),
    )
    op = ms.make_column_mask(4, 0.5, seed=int(torch.randint(1000, (1,), generator=gen)))
    y = ms.observe(op, torch.rand(4, 4, generator=gen, dtype=torch.float64), seed=0)
    tau = 0.05 + 0.5 * float(torch.rand(1, generator=gen))
    x = torch.randn(4, 4, generator=gen, dtype=torch.float64)
    return prior, op, y, x, tau, rates_at(schedule, tau)


def _residual_loss(prior, op, y, x, rates):
    model = AnalyticGaussianScore(prior)
    x0_hat = tweedie_estimate(x, rates, model.score(x, 0.0, rates))
    return float((to_model_space(y.values) - ms.apply_forward(op, x0_hat)).pow(2).sum())


def test_zero_residual_gives_zero_field():
    op = ms.make_column_mask(4, 0.5, seed=0)
    x = torch.tensor([[0.5, -0.25, 0.75, 0.0]] * 4, dtype=torch.float64)
    y = ms.observe(op, to_data_space(x, clamp=False), seed=0)
    rates = Rates(alpha=1.0, sigma=0.0)
    field = dps_gradient(op, y, x, ZeroScore(), rates, GuidanceConfig())
    assert torch.equal(field, torch.zeros_like(x))


def test_identity_approximation_pulls_toward_data(schedule, gen):
    prior, _, _, x, tau, rates = _guidance_case(gen, schedule)
    op = ms.make_identity((4, 4))
    target = torch.rand(4, 4, generator=gen, dtype=torch.float64)
    y = ms.observe(op, target, seed=0)
    model = AnalyticGaussianScore(prior)
    config = GuidanceConfig(zeta_scale=1.0, normalization=Normalization.NONE, jacobian_mode=JacobianMode.IDENTITY)
    field = dps_gradient(op, y, x, model, rates, config, tau=tau)
    x0_hat = tweedie_estimate(x, rates, model.score(x, tau, rates))
    assert torch.allclose(field, 2.0 * (to_model_space(target) - x0_hat) / rates.alpha, atol=1e-10)
    assert model.evaluations == 1


def test_identity_approximation_is_exact_for_a_flat_score(schedule, gen):
    class FlatScore(ZeroScore):
        supports_exact_linearization = True

    _, op, y, x, tau, rates = _guidance_case(gen, schedule)
    fields = [
        dps_gradient(
            op, y, x, FlatScore(), rates,
            GuidanceConfig(zeta_scale=1.0, normalization=Normalization.NONE, jacobian_mode=mode), tau=tau,
        )
        for mode in (JacobianMode.IDENTITY, JacobianMode.EXACT)
    ]
    assert torch.allclose(fields[0], fields[1], atol=1e-10)


def test_residual_norm_scaling(schedule, gen):
    prior, op, y, x, tau, rates = _guidance_case(gen, schedule)
    model = AnalyticGaussianScore(prior)
    plain = dps_gradient(op, y, x, model, rates, GuidanceConfig(normalization=Normalization.NONE), tau=tau)
    normed = dps_gradient(op, y, x, model, rates, GuidanceConfig(), tau=tau)
    norm = math.sqrt(_residual_loss(prior, op, y, x, rates))
    assert torch.allclose(normed, plain / norm, atol=1e-10)


def test_exact_linearization_matches_finite_differences(schedule, gen):
    h = 1e-6
    config = GuidanceConfig(zeta_scale=1.0, normalization=Normalization.NONE, jacobian_mode=JacobianMode.EXACT)
    for _ in range(50):
        prior, op, y, x, tau, rates = _guidance_case(gen, schedule)
        field = dps_gradient(op, y, x, AnalyticGaussianScore(prior), rates, config, tau=tau)
        fd = torch.empty_like(x)
        for idx in range(x.numel()):
            e = torch.zeros_like(x).view(-1)
            e[idx] = h
            e = e.view_as(x)
            fd.view(-1)[idx] = (
                _residual_loss(prior, op, y, x + e, rates) - _residual_loss(prior, op, y, x - e, rates)
            ) / (2 * h)
        assert float((field + fd).norm() / fd.norm().clamp(min=1e-12)) < 1e-5


def test_exact_linearization_needs_support(schedule, gen, tiny_denoiser):
    _, op, y, x, tau, rates = _guidance_case(gen, schedule)
    with pytest.raises(ConfigurationError):
        dps_gradient(op, y, x, NetworkScore(tiny_denoiser), rates, EXACT_PLAIN, tau=tau)


def test_small_guidance_step_decreases_residual(schedule, gen):
    for _ in range(20):
        prior, op, y, x, tau, rates = _guidance_case(gen, schedule)
        model = AnalyticGaussianScore(prior)
        before = _residual_loss(prior, op, y, x, rates)
        zeta = 1.0
        for _ in range(11):
            config = GuidanceConfig(zeta_scale=zeta, jacobian_mode=JacobianMode.EXACT)
            field = dps_gradient(op, y, x, model, rates, config, tau=tau)
            if _residual_loss(prior, op, y, x + field, rates) < before:
                break
            zeta /= 2
        else:
            pytest.fail("guidance never decreased the residual")


# --- trajectories and sequences ----------------------------------------------

def test_gaussian_posterior_mean_is_recovered(schedule):
    d_side = 4
    sign = torch.tensor([1.0, -1.0] * 8, dtype=torch.float64).reshape(d_side, d_side)
    prior = GaussianPrior(mean=0.3 * sign, covariance=torch.full((16,), 0.1, dtype=torch.float64))
    op = ms.from_columns((0, 2), (d_side, d_side))
    truth = prior.mean + 0.25 * sign.flip(0)
    y = ms.observe(op, to_data_space(truth), seed=0)
    exact = gaussian_posterior_mean(prior, op.mask, to_model_space(y.values))

    model = AnalyticGaussianScore(prior)
    init = make_init(InitStrategy(variant=InitVariant.VANILLA), schedule, seed=9, shape=torch.Size((200, 4, 4)))
    samples = to_model_space(run_trajectory(init, model, schedule, y, EXACT_PLAIN))
    assert model.evaluations == schedule.steps_N
    assert model.guidance_evaluations == schedule.steps_N
    assert float((samples.mean(dim=0) - exact).norm() / exact.norm()) < 0.15


@pytest.mark.parametrize("jacobian_mode", [JacobianMode.EXACT, JacobianMode.IDENTITY])
def test_one_step_output_follows_measurement(schedule, jacobian_mode):
    model = AnalyticGaussianScore(_field_prior(4, 4))
    op = ms.make_column_mask(4, 0.5, seed=0)
    strategy = InitStrategy(
        variant=InitVariant.SEQDIFF, tau_prime=schedule.tau_at(1), previous=torch.zeros(4, 4, dtype=torch.float64)
    )
    config = GuidanceConfig(zeta_scale=0.5, normalization=Normalization.NONE, jacobian_mode=jacobian_mode)
    dark = ms.observe(op, torch.zeros(4, 4, dtype=torch.float64), seed=0)
    bright = ms.observe(op, torch.ones(4, 4, dtype=torch.float64), seed=0)
    outputs = [
        run_trajectory(make_init(strategy, schedule, seed=5), model, schedule, y, config) for y in (None, dark, bright)
    ]
    assert model.evaluations == 3
    assert not torch.allclose(outputs[0], outputs[1])
    assert float(outputs[2][op.mask].mean() - outputs[1][op.mask].mean()) > 0.5


def test_step_accounting(schedule, blob_sequence):
    model = AnalyticGaussianScore(_field_prior(*blob_sequence.shape))
    result = sampler_service.reconstruct_sequence(
        _observations(blob_sequence), InitVariant.SEQDIFF, model, schedule, GuidanceConfig(), seed=1, n_prime=4
    )
    assert [r.score_evaluations for r in result.records] == [100] + [4] * (blob_sequence.length - 1)
    assert [r.n_prime for r in result.records] == [100] + [4] * (blob_sequence.length - 1)
    assert result.records[0].strategy == InitVariant.VANILLA
    assert all(r.strategy == InitVariant.SEQDIFF for r in result.records[1:])
    assert all(0.0 <= float(f.min()) and float(f.max()) <= 1.0 for f in result.frames)


def test_reconstruction_is_deterministic(schedule, blob_sequence):
    model = AnalyticGaussianScore(_field_prior(*blob_sequence.shape))
    obs = _observations(blob_sequence)
    a = sampler_service.reconstruct_sequence(obs, InitVariant.CCDF, model, schedule, GuidanceConfig(), seed=4, n_prime=3)
    b = sampler_service.reconstruct_sequence(obs, InitVariant.CCDF, model, schedule, GuidanceConfig(), seed=4, n_prime=3)
    assert all(torch.equal(x, y) for x, y in zip(a.frames, b.frames))


def test_first_frame_is_full_vanilla_for_every_warm_start(schedule, blob_sequence):
    model = AnalyticGaussianScore(_field_prior(*blob_sequence.shape))
    obs = _observations(blob_sequence)[:3]
    for variant, extra in (
        (InitVariant.CCDF, {}),
        (InitVariant.SEQDIFF, {}),
        (InitVariant.SEQDIFF_PLUS, {"transition_model": IdentityTransition()}),
    ):
        result = sampler_service.reconstruct_sequence(
            obs, variant, model, schedule, GuidanceConfig(), seed=4, n_prime=3, **extra
        )
        assert result.records[0].strategy == InitVariant.VANILLA
        assert result.records[0].n_prime == schedule.steps_N
        assert all(r.strategy == variant and r.n_prime == 3 for r in result.records[1:])


def test_identity_transition_reproduces_seqdiff(schedule, blob_sequence):
    model = AnalyticGaussianScore(_field_prior(*blob_sequence.shape))
    obs = _observations(blob_sequence)
    plain = sampler_service.reconstruct_sequence(obs, InitVariant.SEQDIFF, model, schedule, GuidanceConfig(), seed=2)
    plus = sampler_service.reconstruct_sequence(
        obs, InitVariant.SEQDIFF_PLUS, model, schedule, GuidanceConfig(), seed=2, transition_model=IdentityTransition()
    )
    assert all(torch.equal(x, y) for x, y in zip(plain.frames, plus.frames))


def test_single_frame_equals_vanilla_run(schedule, blob_sequence):
    model = AnalyticGaussianScore(_field_prior(*blob_sequence.shape))
    obs = _observations(blob_sequence)[:1]
    result = sampler_service.reconstruct_sequence(obs, InitVariant.SEQDIFF, model, schedule, GuidanceConfig(), seed=6)
    init = make_init(
        InitStrategy(variant=InitVariant.VANILLA), schedule, derive_seed(6, 0), shape=torch.Size(blob_sequence.shape)
    )
    expected = run_trajectory(init, model, schedule, obs[0], GuidanceConfig())
    assert torch.equal(result.frames[0], expected)


def test_adaptive_policy_and_step_limits(schedule, blob_sequence):
    model = AnalyticGaussianScore(_field_prior(*blob_sequence.shape))
    obs = _observations(blob_sequence)
    policy = AdaptiveStepPolicy(motion_levels=[0.0, 10.0], steps=[2, 9], default=5)
    result = sampler_service.reconstruct_sequence(
        obs, InitVariant.SEQDIFF, model, schedule, GuidanceConfig(), seed=1, n_prime=policy
    )
    assert result.records[1].n_prime == 5
    assert all(r.n_prime == 2 for r in result.records[2:])
    with pytest.raises(ConfigurationError):
        sampler_service.reconstruct_sequence(obs, InitVariant.SEQDIFF, model, schedule, GuidanceConfig(), seed=1, n_prime=101)


def test_reconstruction_input_checks(schedule, blob_sequence):
    model = AnalyticGaussianScore(_field_prior(*blob_sequence.shape))
    with pytest.raises(ConfigurationError):
        sampler_service.reconstruct_sequence([], InitVariant.SEQDIFF, model, schedule, GuidanceConfig(), seed=1)
    with pytest.raises(ConfigurationError):
        sampler_service.reconstruct_sequence(
            _observations(blob_sequence), InitVariant.SEQDIFF_PLUS, model, schedule, GuidanceConfig(), seed=1
        )
    with pytest.raises(ConfigurationError):
        sampler_service.reconstruct_sequence(
            list(reversed(_observations(blob_sequence))), InitVariant.SEQDIFF, model, schedule, GuidanceConfig(), seed=1
        )
