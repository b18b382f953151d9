"""Outage-constrained beamforming for IRS-aided MISO downlinks with imperfect CSI."""

__version__ = "0.1.0"
