"""Burstiness analysis of distributed-training traffic, with a PFC/DCQCN
switch simulator for the fan-in case."""

__version__ = "0.1.0"
