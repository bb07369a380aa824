# app/repositories/mask_repository.py
from typing import List, Tuple

from app.repositories.base_repository import BaseRepository
from app.utils.exceptions import FormatError

ColumnSet = Tuple[int, ...]


class MaskRepository(BaseRepository[List[ColumnSet]]):
    """One mask per line: comma-separated kept-column indices in ascending order."""

    suffix = ".mask"
    binary = False

    def encode(self, masks: List[ColumnSet]) -> str:
        return "".join(",".join(str(c) for c in columns) + "\n" for columns in masks)

    def decode(self, payload: str) -> List[ColumnSet]:
        masks: List[ColumnSet] = []
        for number, line in enumerate(payload.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                columns = tuple(int(tok) for tok in line.split(","))
            except ValueError as e:
                raise FormatError(f"non-integer column index in {line!r}", line=number) from e
            if any(c < 0 for c in columns):
                raise FormatError("column indices must be nonnegative", line=number)
            if list(columns) != sorted(set(columns)):
                raise FormatError("column indices must be strictly ascending", line=number)
            masks.append(columns)
        return masks


# Create a singleton instance
mask_repository = MaskRepository()
