"""plotkit: offline figures from fairfedlab run outputs."""

from .figures import FigureJob, plot_mean_vs_worstk, plot_relchange, render
from .schema import SchemaError, load_pf_report, load_summary

__version__ = "0.1.0"

__all__ = [
    "FigureJob",
    "render",
    "plot_relchange",
    "plot_mean_vs_worstk",
    "SchemaError",
    "load_pf_report",
    "load_summary",
]
