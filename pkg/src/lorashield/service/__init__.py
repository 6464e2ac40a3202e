"""HTTP edit service: upload an adapter and a concept bundle, poll the
job, download the edited adapter and its report."""

from .app import ServiceConfig, create_app

__all__ = ["ServiceConfig", "create_app"]
