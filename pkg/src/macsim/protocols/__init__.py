"""Node protocols: two-phase consensus, wPAXOS and the flooding stand-ins."""

from .flooders import AnonFlooder, BroadcastOnce, IdFlooder
from .twophase import TwoPhase
from .wpaxos import WPaxos

__all__ = ["AnonFlooder", "BroadcastOnce", "IdFlooder", "TwoPhase", "WPaxos"]
