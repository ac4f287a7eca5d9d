from .core import ComfortService, ServiceConfig
from .api import create_app, create_app_from_config

__all__ = ["ComfortService", "ServiceConfig", "create_app", "create_app_from_config"]
