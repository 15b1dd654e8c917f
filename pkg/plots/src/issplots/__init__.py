from .figures import CATALOG, FigureSpec, SchemaError, load_norms, load_trace, render, spec_for

__version__ = "0.1.0"

__all__ = ["CATALOG", "FigureSpec", "SchemaError", "load_norms", "load_trace",
           "render", "spec_for"]
