"""Watermark embedding, removal, attack and evaluation workbench.

Images are H x W x C float32 numpy arrays with values in [0, 1].
"""

from ._core import *  # noqa: F401,F403
from ._core import Error

__all__ = [name for name in dir() if not name.startswith("_")]
