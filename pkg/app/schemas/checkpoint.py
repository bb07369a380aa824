from typing import Any, Dict

import torch
from pydantic import BaseModel, ConfigDict, Field

from app.models.enums import ModelKind


class Checkpoint(BaseModel):
    """Architecture config plus parameters in canonical (registration) order."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    kind: ModelKind
    config: Dict[str, Any] = Field(default_factory=dict)
    parameters: Dict[str, torch.Tensor]

    @property
    def parameter_count(self) -> int:
        return sum(int(p.numel()) for p in self.parameters.values())
