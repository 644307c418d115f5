"""HTTP service exposing the prediction pipeline."""

from cpdp.service.app import create_app

__all__ = ["create_app"]
