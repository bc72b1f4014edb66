"""Knowledge-base-augmented report generation on a small numpy autodiff kernel."""

from .config import RunConfig, load_config
from .model import ReportGenModel

__all__ = ["RunConfig", "ReportGenModel", "load_config"]
__version__ = "0.1.0"
