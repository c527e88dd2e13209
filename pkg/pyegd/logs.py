from __future__ import annotations

import logging
from typing import Union

from rich.console import Console
from rich.logging import RichHandler

__all__ = ('setup_logging', 'console')

console = Console(stderr=True)


def setup_logging(level: Union[int, str] = logging.INFO) -> logging.Logger:
    """
    Attaches a :class:`rich.logging.RichHandler` to the ``pyegd`` logger.

    Calling it again replaces the previous handler instead of stacking a new one.

    Parameters
    ----------
    level : Union[:class:`int`, :class:`str`]
        The level for the ``pyegd`` logger.

    Returns
    -------
    :class:`logging.Logger`
    """
    logger = logging.getLogger('pyegd')
    for handler in list(logger.handlers):
        if isinstance(handler, RichHandler):
            logger.removeHandler(handler)

    handler = RichHandler(console=console, show_path=False, rich_tracebacks=True)
    handler.setFormatter(logging.Formatter('%(name)s: %(message)s'))
    logger.addHandler(handler)
    logger.setLevel(level)
    logger.propagate = False
    return logger
