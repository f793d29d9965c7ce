"""Protocol engine registry."""

from typing import Dict, List, Type, Union

from .baselines import Podc18Engine, Vldb20Engine
from .data_models import ClusterConfig, Protocol
from .simulator import ProtocolEngine
from .xlpn22 import Xlpn22Engine

ENGINES: Dict[Protocol, Type[ProtocolEngine]] = {
    Protocol.XLPN22: Xlpn22Engine,
    Protocol.VLDB20: Vldb20Engine,
    Protocol.PODC18: Podc18Engine,
}


def create_engine(protocol: Union[Protocol, str], cfg: ClusterConfig, **kwargs) -> ProtocolEngine:
    """
    Factory function to create a protocol engine.

    Args:
        protocol: Protocol or its name ('xlpn22', 'VLDB-20', ...)
        cfg: Validated cluster configuration
        **kwargs: Engine-specific options (e.g. hop_stalls for the ring protocol)
    """
    return ENGINES[Protocol.parse(protocol)](cfg, **kwargs)


def parse_protocols(value: str) -> List[Protocol]:
    """'all' or a comma-separated list, returned in canonical order."""
    if value.strip().lower() == "all":
        return list(Protocol)
    chosen = {Protocol.parse(part) for part in value.split(",") if part.strip()}
    if not chosen:
        raise ValueError("No protocol selected")
    return [protocol for protocol in Protocol if protocol in chosen]
