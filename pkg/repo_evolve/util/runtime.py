import logging
import os
from typing import Optional

import torch

from repo_evolve.errors import ConfigError

logger = logging.getLogger(__name__)


class RuntimeSingleton:
    """Process-wide worker cap, set once by the CLI."""

    _threads: Optional[int] = None

    @classmethod
    def get_threads(cls) -> int:
        return cls._threads or torch.get_num_threads()

    @classmethod
    def set_threads(cls, threads: Optional[int]):
        if threads is None:
            env = os.environ.get("REPO_EVOLVE_THREADS")
            threads = int(env) if env else None
        if threads is not None:
            if threads < 1:
                raise ConfigError(f"threads must be >= 1, got {threads}")
            torch.set_num_threads(threads)
            cls._threads = threads
            logger.debug("Capped worker threads at %d", threads)


runtime = RuntimeSingleton()
