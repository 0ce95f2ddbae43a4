"""Runtime settings and logging setup.

Values come from the environment (optionally a `.env` file next to the project);
anything numerical that affects simulation results lives in the schemas instead,
so it ends up in the run manifest.
"""
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional
import logging
import os

from dotenv import load_dotenv

load_dotenv()

BASE_DIR = Path(__file__).resolve().parent.parent
DATA_DIR = BASE_DIR / "data"
NETWORKS_DIR = DATA_DIR / "networks"


@dataclass(frozen=True)
class Settings:
    output_root: Path
    log_level: str
    workers: int
    network_dir: Optional[Path]
    port: int

    def network_search_path(self) -> list[Path]:
        """Directories searched (in order) when a network is referenced by name."""
        paths = [NETWORKS_DIR]
        if self.network_dir is not None:
            paths.insert(0, self.network_dir)
        return paths


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    network_dir = os.getenv("LFC_NETWORK_DIR")
    return Settings(
        output_root=Path(os.getenv("LFC_OUTPUT_ROOT", "./runs")),
        log_level=os.getenv("LFC_LOG_LEVEL", "INFO").upper(),
        workers=max(1, int(os.getenv("LFC_WORKERS", "1"))),
        network_dir=Path(network_dir) if network_dir else None,
        port=int(os.getenv("PORT", "10000")),
    )


def configure_logging(level: Optional[str] = None) -> None:
    """Configure root logging once; later calls only adjust the level."""
    level = level or get_settings().log_level
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    logging.getLogger().setLevel(getattr(logging, level, logging.INFO))
