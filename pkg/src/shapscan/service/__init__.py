"""HTTP/JSON review service: scan ingestion, reports, review trail, explanations."""

from .app import create_app
from .config import ServiceConfig, load_config
from .store import ScanStore

__all__ = ["ScanStore", "ServiceConfig", "create_app", "load_config"]
