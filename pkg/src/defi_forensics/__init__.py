"""Offline forensics for DeFi security incidents.

Subpackages and modules:

* :mod:`defi_forensics.evm` -- bytecode decoding, metadata stripping, linear-sweep disassembly
* :mod:`defi_forensics.clones` -- opcode n-gram profiles, Jaccard scoring, threshold clustering
* :mod:`defi_forensics.tracing` -- source-of-funds tracing over a chain-state provider
* :mod:`defi_forensics.eventstudy` -- CAPM fit, abnormal returns, minimal cumulative abnormal return
* :mod:`defi_forensics.incidents` -- incident taxonomy and record schema
* :mod:`defi_forensics.analytics` -- dataset statistics and SEM feature preparation
"""

__version__ = "0.1.0"
