"""
Console + logging setup.

User-facing status lines go through `console` / `err_console` (rich);
library modules log through `logging.getLogger(__name__)` and the records are
rendered by RichHandler once `setup_logging()` has run.
"""

import logging
import os
from typing import Optional

from rich.console import Console
from rich.logging import RichHandler

console = Console()
err_console = Console(stderr=True)

_configured = False


def setup_logging(level: Optional[str] = None) -> None:
    global _configured
    level = (level or os.getenv("HDSW_LOG_LEVEL", "INFO")).upper()
    if _configured:
        logging.getLogger().setLevel(level)
        return
    logging.basicConfig(
        level=level,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=err_console, rich_tracebacks=True, show_path=False)],
    )
    _configured = True
