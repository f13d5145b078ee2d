"""Turn-level checkpoint/restore for agent sandboxes."""

from ._agentcr import (
    AgentCrError,
    Inspector,
    Trace,
    blob_count,
    gen_trace,
    load_trace,
    loads_trace,
    percentile,
    profile_trace,
    replay,
    restore_dir,
    save_trace,
    snapshot_dir,
)

__all__ = [
    "AgentCrError",
    "Inspector",
    "Trace",
    "blob_count",
    "gen_trace",
    "load_trace",
    "loads_trace",
    "percentile",
    "profile_trace",
    "replay",
    "restore_dir",
    "save_trace",
    "snapshot_dir",
]
