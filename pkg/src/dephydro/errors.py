"""
Exception types for dephydro
"""

from typing import Any, Dict, List, Optional


class DephydroError(Exception):
    """Base class for all package errors"""


class ConfigError(DephydroError, ValueError):
    """Invalid configuration text, unknown key or failed validation"""


class DomainError(DephydroError, ValueError):
    """A site, window or support falls outside the simulated domain"""


class CflError(DephydroError, ValueError):
    """Time step would violate the CFL bound of the finite-volume scheme"""


class AuditViolation(DephydroError):
    """A coupled evolution broke one of the exact discrepancy invariants"""

    def __init__(
        self,
        kind: str,
        event_index: int,
        event: Optional[Dict[str, Any]] = None,
        pair: Optional[tuple] = None,
        patterns: Optional[List[Dict[str, Any]]] = None,
    ):
        self.kind = kind
        self.event_index = event_index
        self.event = event or {}
        self.pair = pair
        self.patterns = patterns or []
        super().__init__(
            f"{kind} at event #{event_index} {self.event} for pair {pair}"
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "event_index": self.event_index,
            "event": self.event,
            "pair": list(self.pair) if self.pair else None,
            "patterns": self.patterns,
        }
