"""Timing and crash-consistency simulator for synchronously mirroring
persistent-memory transactions to a replica over RDMA."""
from .core_model import (
    AlignmentError,
    CacheGeometry,
    Cacheline,
    LatencyModelConfig,
    MemoryController,
    ReplicaState,
    drain_all,
    map_address_to_set,
)
from .primitives import LocalState, OutstandingRemote, ProtectionError, RemoteOpKind
from .simulator import SimResult, simulate, simulate_trace
from .strategies import (
    ALL_STRATEGIES,
    OpKind,
    PersistOrderConstraint,
    PrimitiveTrace,
    Strategy,
    TransactionProgram,
    constraints,
    lower,
)
from .workloads import TransactConfig, WhisperLikeConfig, gen_transact, gen_whisper_like, load_trace

__all__ = [n for n in dir() if not n.startswith("_")]
