import math

import pytest
import torch

from app.models.enums import OperatorKind
from app.services.measurement_service import measurement_service as ms
from app.utils.exceptions import ConfigurationError, ShapeMismatchError


def _psnr(x, ref):
    mse = float((x - ref).pow(2).mean())
    return 10 * math.log10(1.0 / mse)


def _operators():
    return [
        ms.make_column_mask(8, 0.25, seed=1, height=6),
        ms.make_pixel_mask((6, 8), 0.3, seed=2),
        ms.make_identity((6, 8)),
    ]


def test_column_mask_cardinality():
    op = ms.make_column_mask(10, 0.2, seed=0)
    assert op.kind == OperatorKind.COLUMN_MASK
    assert len(op.columns) == 2
    assert op.m == 2 * 10
    for width, fraction, kept in [(32, 0.2, 6), (17, 0.5, 9), (9, 0.9, 8)]:
        assert len(ms.make_column_mask(width, fraction, seed=3).columns) == kept


def test_mask_cardinality_rounds_half_up():
    assert len(ms.make_column_mask(10, 0.25, seed=0).columns) == 3
    assert len(ms.make_column_mask(6, 0.25, seed=0).columns) == 2
    assert int(ms.make_pixel_mask((2, 5), 0.25, seed=0).mask.sum()) == 3


def test_column_mask_determinism_and_full_keep():
    assert ms.make_column_mask(16, 0.25, seed=4).columns == ms.make_column_mask(16, 0.25, seed=4).columns
    full = ms.make_column_mask(5, 1.0, seed=4)
    x = torch.arange(25.0).reshape(5, 5)
    assert torch.equal(ms.apply_forward(full, x), x.reshape(-1))


def test_column_mask_rejects_bad_fraction():
    with pytest.raises(ConfigurationError):
        ms.make_column_mask(10, 0.0, seed=0)
    with pytest.raises(ConfigurationError):
        ms.make_column_mask(10, 1.5, seed=0)


def test_forward_selects_row_major():
    op = ms.from_columns((0,), (2, 2))
    assert torch.equal(ms.apply_forward(op, torch.tensor([[1.0, 2.0], [3.0, 4.0]])), torch.tensor([1.0, 3.0]))
    ident = ms.make_identity((2, 2))
    assert torch.equal(ms.apply_forward(ident, torch.tensor([[1.0, 2.0], [3.0, 4.0]])), torch.tensor([1.0, 2.0, 3.0, 4.0]))


def test_adjoint_pairing_for_every_kind():
    gen = torch.Generator().manual_seed(0)
    for op in _operators():
        for _ in range(100):
            x = torch.randn(op.shape, generator=gen, dtype=torch.float64)
            y = torch.randn(op.m, generator=gen, dtype=torch.float64)
            lhs = float(ms.apply_forward(op, x) @ y)
            rhs = float((x * ms.apply_adjoint(op, y)).sum())
            assert abs(lhs - rhs) < 1e-12 * max(1.0, abs(lhs))


def test_selection_identities():
    gen = torch.Generator().manual_seed(1)
    for op in _operators():
        x = torch.randn(op.shape, generator=gen, dtype=torch.float64)
        y = torch.randn(op.m, generator=gen, dtype=torch.float64)
        projected = ms.apply_adjoint(op, ms.apply_forward(op, x))
        assert torch.equal(projected, torch.where(op.mask, x, torch.zeros_like(x)))
        assert torch.equal(ms.apply_adjoint(op, ms.apply_forward(op, projected)), projected)
        assert torch.equal(ms.apply_forward(op, ms.apply_adjoint(op, y)), y)


def test_shape_errors():
    op = ms.make_column_mask(8, 0.25, seed=1, height=6)
    with pytest.raises(ShapeMismatchError):
        ms.apply_forward(op, torch.zeros(5, 8))
    with pytest.raises(ShapeMismatchError):
        ms.apply_adjoint(op, torch.zeros(op.m + 1))
    with pytest.raises(ShapeMismatchError):
        ms.adjoint_fill(op, torch.zeros(op.m - 1))


def test_observe_noise():
    x = torch.rand(4, 4)
    op = ms.make_column_mask(4, 0.5, seed=0)
    assert torch.equal(ms.observe(op, x, seed=1).values, ms.apply_forward(op, x))

    noisy = ms.make_identity((1, 100_000), noise_std=0.1)
    zeros = torch.zeros(1, 100_000, dtype=torch.float64)
    obs = ms.observe(noisy, zeros, seed=7, frame_index=3)
    assert obs.frame_index == 3
    assert float(obs.values.std()) == pytest.approx(0.1, rel=0.02)
    assert torch.equal(obs.values, ms.observe(noisy, zeros, seed=7).values)


def test_adjoint_fill_interpolates_between_kept_columns():
    op = ms.from_columns((0, 2), (1, 3))
    filled = ms.adjoint_fill(op, torch.tensor([1.0, 3.0]))
    assert torch.allclose(filled, torch.tensor([[1.0, 2.0, 3.0]]))


def test_adjoint_fill_copies_at_borders():
    op = ms.from_columns((1, 2), (1, 5))
    filled = ms.adjoint_fill(op, torch.tensor([4.0, 6.0]))
    assert torch.allclose(filled, torch.tensor([[4.0, 4.0, 6.0, 6.0, 6.0]]))


def test_adjoint_fill_identity_on_full_observation():
    x = torch.rand(5, 5)
    for op in (ms.make_identity((5, 5)), ms.make_column_mask(5, 1.0, seed=2)):
        assert torch.equal(ms.adjoint_fill(op, ms.apply_forward(op, x)), x)


def test_adjoint_fill_beats_zero_fill_on_smooth_frame():
    rows, cols = torch.meshgrid(torch.arange(32.0), torch.arange(32.0), indexing="ij")
    frame = torch.exp(-((rows - 15.0) ** 2 + (cols - 17.0) ** 2) / (2 * 4.0 ** 2))
    op = ms.from_columns(tuple(range(0, 32, 4)), (32, 32))
    y = ms.apply_forward(op, frame)
    assert _psnr(ms.adjoint_fill(op, y), frame) > _psnr(ms.zero_fill(op, y), frame)
