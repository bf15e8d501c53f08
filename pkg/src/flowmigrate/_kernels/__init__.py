"""Kernel selection: compiled extension when available, pure Python otherwise.

Set ``FLOWMIGRATE_PURE_KERNELS=1`` to force the pure backend (used by the
benchmark and by tests that compare the two implementations).
"""

from __future__ import annotations

import os

from . import pure

ACK_OK = pure.ACK_OK
ACK_COMPLETED = pure.ACK_COMPLETED
ACK_UNKNOWN = pure.ACK_UNKNOWN
ACK_ALREADY_DONE = pure.ACK_ALREADY_DONE

_FORCE_PURE = os.environ.get("FLOWMIGRATE_PURE_KERNELS", "") not in ("", "0")

try:
    from . import _native  # type: ignore[attr-defined]
except ImportError:
    _native = None

if _native is not None and not _FORCE_PURE:
    _active = _native
else:
    _active = pure

EventCalendar = _active.EventCalendar
AckerTable = _active.AckerTable


def active_backend() -> str:
    """Name of the kernel backend in use: 'native' or 'pure'."""
    return _active.BACKEND_NAME


def available_backends() -> dict[str, object]:
    """Backend name -> module, for benchmarks and equivalence tests."""
    backends: dict[str, object] = {"pure": pure}
    if _native is not None:
        backends["native"] = _native
    return backends


def get_backend(name: str | None):
    """Resolve a backend module by name; None means the active default."""
    if name is None:
        return _active
    try:
        return available_backends()[name]
    except KeyError:
        raise ValueError(f"unknown kernel backend: {name!r}") from None
