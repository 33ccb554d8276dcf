"""Patch-to-PoC reproduction harness for Linux kernel N-day vulnerabilities.

Pipeline: fix commit -> vulnerable environment at the parent commit ->
agent-driven reproduction over a controlled tool surface -> crash-evidence
verdict with cheat detection -> corpus statistics.
"""

__version__ = "0.1.0"
