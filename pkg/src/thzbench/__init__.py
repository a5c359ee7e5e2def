"""Desk-scale emulation and benchmarking of edge/cloud channel-configuration
services under monolithic, swarm-style and kube-style orchestration."""

__version__ = "0.1.0"
