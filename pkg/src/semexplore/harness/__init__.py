"""Metrics, map export, benchmark sweeps and the command-line entry point."""
