# app/services/plot_service.py
from collections import defaultdict
from pathlib import Path
from typing import Dict, List, Tuple, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from loguru import logger  # noqa: E402

from app.models.enums import PlotKind  # noqa: E402
from app.repositories.report_repository import report_repository  # noqa: E402
from app.schemas.reports import RunReportRow  # noqa: E402
from app.services.bench_service import best_steps_table, motion_bins, psnr_vs_steps_table, steady_rows  # noqa: E402

# Fixed rc settings; hashsalt and text-as-text keep the SVG bytes reproducible.
PLOT_RC = {
    "svg.hashsalt": "seqdiff",
    "svg.fonttype": "none",
    "figure.figsize": (6.0, 4.0),
    "figure.dpi": 100,
    "axes.linewidth": 0.8,
    "axes.labelsize": 9,
    "lines.linewidth": 1.2,
    "lines.markersize": 4,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "font.family": "DejaVu Sans",
}

AXIS_LABELS = {
    PlotKind.PSNR_VS_STEPS: ("N' (reverse steps)", "mean PSNR [dB]"),
    PlotKind.PSNR_VS_MOTION: ("motion (mean abs. frame difference)", "mean PSNR [dB]"),
    PlotKind.BEST_STEP_VS_MOTION: ("motion (mean abs. frame difference)", "best N'"),
}

Curves = Dict[str, List[Tuple[float, float]]]


def _psnr_vs_steps(rows: List[RunReportRow]) -> Curves:
    curves: Curves = defaultdict(list)
    for strategy, n_prime, mean_psnr, _, _ in psnr_vs_steps_table(rows):
        curves[strategy].append((float(n_prime), mean_psnr))
    return curves


def _psnr_vs_motion(rows: List[RunReportRow], num_bins: int) -> Curves:
    assignment, centers = motion_bins(rows, num_bins)
    sums: Dict[Tuple[str, int], List[float]] = defaultdict(list)
    for r in steady_rows(rows):
        if r.sequence_id in assignment:
            sums[(f"{r.strategy.value} N'={r.n_prime}", assignment[r.sequence_id])].append(r.psnr_db)
    curves: Curves = defaultdict(list)
    for (label, b), values in sorted(sums.items()):
        curves[label].append((centers[b], sum(values) / len(values)))
    return curves


def _best_step_vs_motion(rows: List[RunReportRow], num_bins: int) -> Curves:
    curves: Curves = defaultdict(list)
    for strategy, center, n_prime, _ in best_steps_table(rows, num_bins):
        curves[strategy].append((center, float(n_prime)))
    return curves


class PlotService:
    def curves(self, rows: List[RunReportRow], kind: PlotKind, num_bins: int = 5) -> Curves:
        if kind == PlotKind.PSNR_VS_STEPS:
            curves = _psnr_vs_steps(rows)
        elif kind == PlotKind.PSNR_VS_MOTION:
            curves = _psnr_vs_motion(rows, num_bins)
        else:
            curves = _best_step_vs_motion(rows, num_bins)
        return {label: sorted(points) for label, points in sorted(curves.items())}

    def emit_plot(
        self, csv_path: Union[str, Path], kind: PlotKind, out_path: Union[str, Path], num_bins: int = 5
    ) -> Path:
        """Render one polyline per strategy from a RunReport CSV into a standalone SVG."""
        rows = report_repository.load(csv_path)
        curves = self.curves(rows, kind, num_bins)
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)

        with plt.rc_context(PLOT_RC):
            fig, ax = plt.subplots()
            xlabel, ylabel = AXIS_LABELS[kind]
            ax.set_xlabel(xlabel)
            ax.set_ylabel(ylabel)
            if not curves:
                ax.text(0.5, 0.5, "no data", ha="center", va="center", transform=ax.transAxes, gid="no-data")
            for label, points in curves.items():
                xs, ys = zip(*points)
                ax.plot(xs, ys, marker="o", label=label, gid=f"line-{label.replace(' ', '_')}")
            if curves:
                if kind == PlotKind.PSNR_VS_STEPS:
                    ax.set_xscale("log")
                ax.legend(loc="best")
            ax.grid(True, linewidth=0.3, alpha=0.5)
            fig.tight_layout()
            fig.savefig(out_path, format="svg", metadata={"Date": None})
            plt.close(fig)

        logger.info(f"Wrote {kind.value} plot with {len(curves)} curves to {out_path}")
        return out_path


# Create a singleton instance
plot_service = PlotService()
