# app/repositories/base_repository.py
from abc import ABC, abstractmethod
import os
from pathlib import Path
import tempfile
from typing import Generic, List, TypeVar, Union

from loguru import logger

from app.utils.exceptions import FormatError

ModelType = TypeVar("ModelType")
PathLike = Union[str, Path]


class BaseRepository(Generic[ModelType], ABC):
    """Base repository class for file-backed artifacts."""

    suffix: str = ""
    binary: bool = True

    @abstractmethod
    def encode(self, obj: ModelType) -> Union[bytes, str]:
        ...

    @abstractmethod
    def decode(self, payload: Union[bytes, str]) -> ModelType:
        ...

    def save(self, obj: ModelType, path: PathLike) -> Path:
        """Write atomically: encode, write a sibling temp file, then rename."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = self.encode(obj)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
        try:
            with os.fdopen(fd, "wb" if self.binary else "w", **({} if self.binary else {"newline": ""})) as fh:
                fh.write(payload)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        logger.debug(f"Wrote {path}")
        return path

    def load(self, path: PathLike) -> ModelType:
        path = Path(path)
        if not path.is_file():
            raise FormatError(f"{path} does not exist")
        if self.binary:
            payload = path.read_bytes()
        else:
            with open(path, "r", newline="") as fh:
                payload = fh.read()
        return self.decode(payload)

    def exists(self, path: PathLike) -> bool:
        return Path(path).is_file()

    def list_paths(self, directory: PathLike) -> List[Path]:
        """Files with this repository's suffix, sorted by name."""
        directory = Path(directory)
        if not directory.is_dir():
            return []
        return sorted(p for p in directory.iterdir() if p.is_file() and p.name.endswith(self.suffix))
