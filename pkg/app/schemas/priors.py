from typing import Tuple

import torch
from pydantic import BaseModel, ConfigDict, Field, model_validator

# Full covariances are only accepted up to this dimension.
MAX_FULL_COVARIANCE_DIM = 64


class GaussianPrior(BaseModel):
    """Gaussian data prior N(mean, covariance) over fields of shape event_shape.

    ``covariance`` is either a vector of positive variances (diagonal prior, any
    dimension) or a symmetric positive-definite d x d matrix for d <= 64.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    mean: torch.Tensor = Field(..., description="Mean field, shape event_shape")
    covariance: torch.Tensor = Field(..., description="Diagonal (d,) or full (d, d) covariance")

    @model_validator(mode="after")
    def check_covariance(self) -> "GaussianPrior":
        d = self.mean.numel()
        cov = self.covariance
        if cov.dim() == 1:
            if cov.numel() != d:
                raise ValueError(f"diagonal covariance has {cov.numel()} entries, mean has {d}")
            if not bool((cov > 0).all()):
                raise ValueError("diagonal covariance entries must be positive")
        elif cov.dim() == 2:
            if cov.shape != (d, d):
                raise ValueError(f"full covariance must be {d}x{d}, got {tuple(cov.shape)}")
            if d > MAX_FULL_COVARIANCE_DIM:
                raise ValueError(f"full covariance only supported for d <= {MAX_FULL_COVARIANCE_DIM}")
            if not torch.allclose(cov, cov.T, atol=1e-12, rtol=0):
                raise ValueError("full covariance must be symmetric")
            if not bool((torch.linalg.eigvalsh(cov) > 0).all()):
                raise ValueError("full covariance must be positive definite")
        else:
            raise ValueError("covariance must be a vector or a square matrix")
        return self

    @property
    def event_shape(self) -> Tuple[int, ...]:
        return tuple(self.mean.shape)

    @property
    def dim(self) -> int:
        return self.mean.numel()

    @property
    def is_diagonal(self) -> bool:
        return self.covariance.dim() == 1

    def dense_covariance(self) -> torch.Tensor:
        return torch.diag(self.covariance) if self.is_diagonal else self.covariance

    def sample(self, n: int, generator: torch.Generator) -> torch.Tensor:
        """Draw n fields from the prior, shape (n, *event_shape)."""
        z = torch.randn((n, self.dim), generator=generator, dtype=self.mean.dtype)
        if self.is_diagonal:
            draws = z * self.covariance.sqrt()
        else:
            draws = z @ torch.linalg.cholesky(self.covariance).T
        return (draws + self.mean.reshape(-1)).reshape((n,) + self.event_shape)
