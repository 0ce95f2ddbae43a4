"""Dependencias compartidas por los endpoints."""
from app.core.config import Settings, get_settings


def settings_dependency() -> Settings:
    """Runtime settings; overridable in tests through ``app.dependency_overrides``."""
    return get_settings()
