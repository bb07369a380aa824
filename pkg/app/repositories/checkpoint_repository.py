# app/repositories/checkpoint_repository.py
from collections import OrderedDict
import json
from pathlib import Path
from typing import Dict, Union

import numpy as np
import torch
import torch.nn as nn

from app.models.denoiser import DenoiserNet
from app.models.enums import ModelKind
from app.models.transition import TubeletTransformer
from app.repositories.base_repository import BaseRepository, PathLike
from app.schemas.checkpoint import Checkpoint
from app.schemas.training import DenoiserConfig, TransitionSpec
from app.utils.exceptions import CheckpointError, FormatError

SDMC_MAGIC = b"SDMC"
SDMC_VERSION = 1


class CheckpointRepository(BaseRepository[Checkpoint]):
    """SDMC container.

    Layout (little-endian): magic "SDMC", version u32, model-kind u8, header length u32,
    UTF-8 JSON header {"config", "parameters": [[name, shape], ...]}, parameter count u64,
    then every parameter as float32 in header order.
    """

    suffix = ".sdmc"

    def encode(self, ckpt: Checkpoint) -> bytes:
        header = json.dumps(
            {
                "config": ckpt.config,
                "parameters": [[name, list(p.shape)] for name, p in ckpt.parameters.items()],
            },
            sort_keys=True,
            separators=(",", ":"),
        ).encode("utf-8")
        flat = [p.detach().to(torch.float32).reshape(-1).cpu().numpy() for p in ckpt.parameters.values()]
        values = np.concatenate(flat) if flat else np.zeros(0, dtype=np.float32)
        return b"".join(
            [
                SDMC_MAGIC,
                np.array([SDMC_VERSION], dtype="<u4").tobytes(),
                np.array([int(ckpt.kind)], dtype="u1").tobytes(),
                np.array([len(header)], dtype="<u4").tobytes(),
                header,
                np.array([values.size], dtype="<u8").tobytes(),
                values.astype("<f4").tobytes(),
            ]
        )

    def decode(self, payload: bytes) -> Checkpoint:
        if len(payload) < 4 or payload[:4] != SDMC_MAGIC:
            raise FormatError("not an SDMC checkpoint", offset=0)
        if len(payload) < 13:
            raise FormatError("truncated SDMC header", offset=len(payload))
        version = int(np.frombuffer(payload, dtype="<u4", count=1, offset=4)[0])
        if version != SDMC_VERSION:
            raise FormatError(f"unsupported SDMC version {version}", offset=4)
        try:
            kind = ModelKind(payload[8])
        except ValueError as e:
            raise FormatError(f"unknown model kind {payload[8]}", offset=8) from e
        header_len = int(np.frombuffer(payload, dtype="<u4", count=1, offset=9)[0])
        header_end = 13 + header_len
        if len(payload) < header_end + 8:
            raise FormatError("truncated SDMC header", offset=len(payload))
        try:
            header = json.loads(payload[13:header_end].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise FormatError("malformed SDMC header", offset=13) from e

        count = int(np.frombuffer(payload, dtype="<u8", count=1, offset=header_end)[0])
        data_start = header_end + 8
        if len(payload) != data_start + 4 * count:
            raise FormatError(f"SDMC parameter data does not hold {count} floats", offset=data_start)
        values = np.frombuffer(payload, dtype="<f4", count=count, offset=data_start)

        params: Dict[str, torch.Tensor] = OrderedDict()
        pos = 0
        for name, shape in header.get("parameters", []):
            size = int(np.prod(shape)) if shape else 1
            params[name] = torch.from_numpy(values[pos:pos + size].astype(np.float32).reshape(shape).copy())
            pos += size
        if pos != count:
            raise FormatError(f"header describes {pos} parameters, file holds {count}", offset=header_end)
        return Checkpoint(kind=kind, config=header.get("config", {}), parameters=params)


def _checkpoint_of(model: nn.Module, kind: ModelKind, config: dict) -> Checkpoint:
    return Checkpoint(kind=kind, config=config, parameters=OrderedDict(model.named_parameters()))


def _restore(model: nn.Module, ckpt: Checkpoint) -> nn.Module:
    expected = OrderedDict(model.named_parameters())
    if list(expected) != list(ckpt.parameters):
        raise CheckpointError("checkpoint parameter layout does not match the model")
    with torch.no_grad():
        for name, param in expected.items():
            stored = ckpt.parameters[name]
            if stored.shape != param.shape:
                raise CheckpointError(f"parameter {name} has shape {tuple(stored.shape)}, expected {tuple(param.shape)}")
            param.copy_(stored.to(param.dtype))
    model.eval()
    return model


class ModelStore:
    """Saves and rebuilds denoisers and transition predictors."""

    def __init__(self, repository: CheckpointRepository):
        self.repository = repository

    def save_denoiser(self, model: DenoiserNet, path: PathLike) -> Path:
        return self.repository.save(_checkpoint_of(model, ModelKind.DENOISER, model.config.model_dump()), path)

    def save_transition(self, model: TubeletTransformer, path: PathLike) -> Path:
        return self.repository.save(_checkpoint_of(model, ModelKind.TRANSITION, model.spec.model_dump()), path)

    def _load(self, path: Union[str, Path], kind: ModelKind) -> Checkpoint:
        if not self.repository.exists(path):
            raise CheckpointError(f"checkpoint {path} not found")
        ckpt = self.repository.load(path)
        if ckpt.kind != kind:
            raise CheckpointError(f"{path} holds a {ckpt.kind.name.lower()} model, expected {kind.name.lower()}")
        return ckpt

    def load_denoiser(self, path: Union[str, Path]) -> DenoiserNet:
        ckpt = self._load(path, ModelKind.DENOISER)
        try:
            model = DenoiserNet(DenoiserConfig(**ckpt.config))
        except ValueError as e:
            raise CheckpointError(f"invalid denoiser config in {path}: {e}") from e
        return _restore(model, ckpt)

    def load_transition(self, path: Union[str, Path]) -> TubeletTransformer:
        ckpt = self._load(path, ModelKind.TRANSITION)
        try:
            model = TubeletTransformer(TransitionSpec(**ckpt.config))
        except ValueError as e:
            raise CheckpointError(f"invalid transition config in {path}: {e}") from e
        return _restore(model, ckpt)


# Create singleton instances
checkpoint_repository = CheckpointRepository()
model_store = ModelStore(checkpoint_repository)
