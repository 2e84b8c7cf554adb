"""Discrete-event LoRa PHY/MAC simulator for gateway-controlled FreeChirp access."""

__version__ = "0.1.0"
