from .app import create_app
from .store import PatientStore

__all__ = ["create_app", "PatientStore"]
