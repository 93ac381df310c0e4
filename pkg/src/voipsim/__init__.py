"""Discrete-event VoIP simulator for WiFi, UMTS and mixed access networks."""

__version__ = "0.1.0"
