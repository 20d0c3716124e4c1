"""Configuration, presets and logging setup.

Environment variables (optionally from a ``.env`` file):

- ``LOG_LEVEL``: stderr log level, default ``INFO``.
- ``EDGE_HARDEN_OUTPUT_DIR``: default directory for written artifacts.
- ``EDGE_HARDEN_LOG_FILE``: optional path of a rotating log file.
- ``EDGE_HARDEN_JOBS``: default worker count for parallel solves.
"""

from contextlib import suppress
import os
from pathlib import Path
import sys
from typing import Annotated

from dotenv import load_dotenv
from loguru import logger
import psutil
from pydantic import BaseModel, ConfigDict, Field

from app.models import SynthesisParams

load_dotenv()

DEFAULT_OUTPUT_DIR = Path(os.getenv("EDGE_HARDEN_OUTPUT_DIR", "output"))
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
LOG_FILE = os.getenv("EDGE_HARDEN_LOG_FILE")

# loguru installs its stderr sink under id 0.
DEFAULT_HANDLER_ID = 0
_handler_ids: list[int] = []

# Every constant of the full-scale benchmark setup.
BENCHMARK_PRESET = SynthesisParams(
    n_nodes=100,
    attachment_rate=2,
    n_aps=80,
    n_ens=30,
    delay_range=(2.0, 5.0),
    eligibility_threshold=20.0,
    capacity_choices=(16, 32, 64, 128, 256, 512, 1024),
    demand_range=(20.0, 35.0),
    unmet_penalty=5.0,
    gamma=0.1,
    theta=0.8,
    beta=0.8,
)

PRESETS: dict[str, SynthesisParams] = {"paper": BENCHMARK_PRESET}


class Tolerances(BaseModel):
    """Numeric tolerances shared by the solvers and checks."""

    model_config = ConfigDict(frozen=True)

    feasibility: Annotated[float, Field(gt=0)] = 1e-8
    optimality: Annotated[float, Field(gt=0)] = 1e-9
    duality_gap: Annotated[float, Field(gt=0)] = 1e-7
    verification: Annotated[float, Field(gt=0)] = 1e-6
    bnb_gap: Annotated[float, Field(gt=0)] = 1e-6
    allocation: Annotated[float, Field(gt=0)] = 1e-8


class SolverOptions(BaseModel):
    """Limits and switches for the MILP and enumeration backends."""

    model_config = ConfigDict(frozen=True)

    node_limit: Annotated[int, Field(ge=1)] = 1_000_000
    time_limit_s: Annotated[float, Field(gt=0)] = 1800.0
    enumeration_cap: Annotated[int, Field(ge=1)] = 1_000_000
    jobs: Annotated[int, Field(ge=1)] = 1
    explore_ties: bool = True
    max_escalations: Annotated[int, Field(ge=0)] = 3
    tolerances: Tolerances = Tolerances()


def default_jobs() -> int:
    """Return the worker count from the environment, else 1.

    ``EDGE_HARDEN_JOBS=auto`` selects the number of physical cores.
    """
    raw = os.getenv("EDGE_HARDEN_JOBS")
    if not raw:
        return 1
    if raw == "auto":
        return psutil.cpu_count(logical=False) or 1
    return max(1, int(raw))


def configure_logging(level: str = LOG_LEVEL, log_file: str | None = LOG_FILE) -> None:
    """Install the stderr sink and, when requested, a rotating file sink.

    Only loguru's default handler and sinks added by earlier calls are
    replaced; sinks installed elsewhere stay attached.
    """
    for handler_id in (DEFAULT_HANDLER_ID, *_handler_ids):
        with suppress(ValueError):
            logger.remove(handler_id)
    _handler_ids.clear()
    _handler_ids.append(
        logger.add(
            sys.stderr, level=level.upper(), format="{time:HH:mm:ss} | {level: <8} | {message}"
        )
    )
    if log_file:
        log_path = Path(log_file)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        _handler_ids.append(
            logger.add(log_path, level="DEBUG", rotation="1 MB", retention="1 day")
        )
