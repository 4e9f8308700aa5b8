"""Simulated identities: HMAC tags stand in for MSP-issued signatures."""

from __future__ import annotations

import hashlib
import hmac
import json
from typing import Any

_ROOT = b"eovsim-msp"


def _secret(identity: str) -> bytes:
    return hashlib.sha256(_ROOT + identity.encode()).digest()


def _encode(parts: tuple[Any, ...]) -> bytes:
    def default(obj: Any) -> Any:
        if isinstance(obj, bytes):
            return obj.hex()
        raise TypeError(type(obj).__name__)

    return json.dumps(parts, sort_keys=True, separators=(",", ":"), default=default).encode()


def sign(identity: str, *parts: Any) -> str:
    return hmac.new(_secret(identity), _encode(parts), hashlib.sha256).hexdigest()[:32]


def verify(identity: str, tag: str, *parts: Any) -> bool:
    return hmac.compare_digest(sign(identity, *parts), tag)
