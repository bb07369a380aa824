# app/repositories/report_repository.py
import csv
import io
from pathlib import Path
from typing import List, Sequence

from pydantic import ValidationError

from app.repositories.base_repository import BaseRepository, PathLike
from app.schemas.reports import REPORT_HEADER, RunReportRow
from app.utils.exceptions import FormatError


def _format_row(row: RunReportRow) -> List[str]:
    return [
        row.sequence_id,
        str(row.frame),
        row.strategy.value,
        str(row.n_prime),
        f"{row.psnr_db:.6f}",
        f"{row.motion:.6f}",
        f"{row.wall_s:.6f}",
        str(row.seed),
        row.mask_id,
    ]


class ReportRepository(BaseRepository[List[RunReportRow]]):
    """RunReport CSV with a fixed header; rows are written in canonical order."""

    suffix = ".csv"
    binary = False

    def encode(self, rows: List[RunReportRow]) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(REPORT_HEADER)
        for row in sorted(rows, key=RunReportRow.sort_key):
            writer.writerow(_format_row(row))
        return buffer.getvalue()

    def decode(self, payload: str) -> List[RunReportRow]:
        reader = csv.reader(io.StringIO(payload))
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError("empty report file", line=1)
        if tuple(header) != REPORT_HEADER:
            raise FormatError(f"unexpected report header {','.join(header)}", line=1)
        rows: List[RunReportRow] = []
        for number, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != len(REPORT_HEADER):
                raise FormatError(f"expected {len(REPORT_HEADER)} fields, got {len(record)}", line=number)
            try:
                rows.append(RunReportRow(**dict(zip(REPORT_HEADER, record))))
            except ValidationError as e:
                raise FormatError(f"invalid report row: {e.errors()[0]['msg']}", line=number) from e
        return rows

    def write_table(self, path: PathLike, header: Sequence[str], rows: Sequence[Sequence]) -> Path:
        """Write a summary table using the report float format."""
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([f"{v:.6f}" if isinstance(v, float) else v for v in row])
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write(buffer.getvalue())
        return path


# Create a singleton instance
report_repository = ReportRepository()
