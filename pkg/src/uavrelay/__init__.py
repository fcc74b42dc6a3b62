"""Desk-scale mmWave road simulator and multi-agent learner for
vision-aided UAV relay handover."""

__version__ = "0.1.0"
