"""Peer-to-peer exchange of weather station data.

Nodes trade JSON messages over newline-framed TCP: a handshake
establishes a session, then peers can discover services, swap peer
lists, stream real-time samples, or fetch stored ones by timestamp.
The package also ships a deterministic virtual network for scripted
multi-node simulations.
"""

__version__ = "0.1.0"
