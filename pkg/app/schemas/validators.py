from typing import List, Optional, Sequence

import torch


class ConfigValidators:
    @staticmethod
    def validate_positive(value: float, name: str) -> float:
        if not value > 0:
            raise ValueError(f"{name} must be positive, got {value}")
        return value

    @staticmethod
    def validate_fraction(value: float, name: str, allow_zero: bool = False) -> float:
        lower_ok = value >= 0 if allow_zero else value > 0
        if not (lower_ok and value <= 1):
            bound = "[0, 1]" if allow_zero else "(0, 1]"
            raise ValueError(f"{name} must lie in {bound}, got {value}")
        return value

    @staticmethod
    def validate_grid(values: Sequence[float], name: str, positive: bool = True) -> List:
        if not values:
            raise ValueError(f"{name} must not be empty")
        for v in values:
            if positive and not v > 0:
                raise ValueError(f"{name} entries must be positive, got {v}")
            if not positive and v < 0:
                raise ValueError(f"{name} entries must be nonnegative, got {v}")
        return list(values)

    @staticmethod
    def validate_divides(divisor: int, total: int, what: str) -> None:
        if total % divisor != 0:
            raise ValueError(f"{what}: {divisor} does not divide {total}")

    @staticmethod
    def validate_mask(mask: Optional[torch.Tensor]) -> Optional[torch.Tensor]:
        if mask is None:
            return mask
        if mask.dtype != torch.bool:
            raise ValueError("mask must be boolean")
        if not bool(mask.any()):
            raise ValueError("mask must keep at least one entry")
        return mask
