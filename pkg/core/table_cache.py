"""
ClusterReserve - Table Cache
----------------------------
Process-wide cache of recursion tables.

Tables depend on (center, cluster, t, s) and the quadrature settings only.
A cached table serves any request whose m_max does not exceed its own.
"""

from __future__ import annotations

import logging
import threading
from typing import Any, Callable, Dict, Tuple

logger = logging.getLogger(__name__)


# ===============================
# Cache State
# ===============================

_cache: Dict[Tuple[str, str, Any], Any] = {}
_lock = threading.Lock()


def get_or_build(kind: str, fingerprint: str, cfg: Any, m_max: int,
                 build: Callable[[], Any]) -> Any:
    """Return a cached table with table.m_max >= m_max, or build and store one."""
    key = (kind, fingerprint, cfg)

    with _lock:
        tab = _cache.get(key)
    if tab is not None and tab.m_max >= m_max:
        logger.debug("table cache hit: %s %s (m_max=%d)", kind, fingerprint[:12], tab.m_max)
        return tab

    tab = build()
    with _lock:
        current = _cache.get(key)
        if current is None or current.m_max < tab.m_max:
            _cache[key] = tab
    return tab


def clear_cache() -> None:
    with _lock:
        _cache.clear()
