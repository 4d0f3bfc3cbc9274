"""Reconstruction metrics and the paired statistical comparison protocol."""

from .compare import (
    CSV_FIELDS,
    METRICS,
    MODEL_LABELS,
    MODEL_TAGS,
    ComparisonReport,
    MetricsRow,
    compare_models,
    format_cell,
    metrics_row,
    read_metrics_csv,
    results_table,
    summarize,
    write_comparison_json,
    write_metrics_csv,
)
from .metrics import gaussian_taps, mse_metric, psnr, ssim, ssim_map
from .stats import (
    EXACT_FIT_P,
    ShapiroResult,
    SlopeResult,
    TTestResult,
    WilcoxonResult,
    average_ranks,
    betainc,
    paired_t_test,
    shapiro_wilk,
    slope_regression,
    t_two_sided_p,
    wilcoxon_signed_rank,
)

__all__ = [
    "CSV_FIELDS", "METRICS", "MODEL_LABELS", "MODEL_TAGS", "ComparisonReport", "MetricsRow", "compare_models",
    "format_cell", "metrics_row", "read_metrics_csv", "results_table", "summarize", "write_comparison_json",
    "write_metrics_csv", "gaussian_taps", "mse_metric", "psnr", "ssim", "ssim_map", "EXACT_FIT_P",
    "ShapiroResult", "SlopeResult", "TTestResult", "WilcoxonResult", "average_ranks", "betainc",
    "paired_t_test", "shapiro_wilk", "slope_regression", "t_two_sided_p", "wilcoxon_signed_rank",
]
