"""Spectral stability diagnostics for learned representations.

Checks whether the top-k eigenspace of a representation's second-moment
operator is identifiable from n samples (split-half error below the
eigengap), and provides the supporting concentration bounds, margin fits,
synthetic experiments and command-line tooling.
"""
from .diagnostics import *  # noqa: F401,F403
from .errors import *  # noqa: F401,F403
from .fisher import *  # noqa: F401,F403
from .formats import ingest_features, export_features  # noqa: F401
from .pipeline import SipReport, DiagnoseResult, diagnose, emit_report, report_dict  # noqa: F401
from .probe import *  # noqa: F401,F403
from .spectral import *  # noqa: F401,F403
from .synthetic import *  # noqa: F401,F403

__version__ = "0.1.0"
