"""Source-of-funds tracing over account-based chain data."""

from .provider import (
    ChainFixture,
    ChainStateProvider,
    FixtureProvider,
    Transfer,
    TxRecord,
    norm_address,
)
from .tracer import (
    DEFAULT_MAX_HOPS,
    ActiveAtGenesis,
    FundingSource,
    FundingTxNotFound,
    GenesisFunded,
    Label,
    LabelRegistry,
    LinkCluster,
    LinkMember,
    NeverActive,
    NoBalanceBeforeActivity,
    TraceError,
    TraceHop,
    find_first_activity,
    find_funding_block,
    link_adversaries,
    one_hop_trace,
    path_distances,
    trace_to_source,
)

__all__ = [
    "ActiveAtGenesis", "ChainFixture", "ChainStateProvider", "DEFAULT_MAX_HOPS",
    "FixtureProvider", "FundingSource", "FundingTxNotFound", "GenesisFunded", "Label",
    "LabelRegistry", "LinkCluster", "LinkMember", "NeverActive",
    "NoBalanceBeforeActivity", "TraceError", "TraceHop", "Transfer", "TxRecord",
    "find_first_activity", "find_funding_block", "link_adversaries", "norm_address",
    "one_hop_trace", "path_distances", "trace_to_source",
]
