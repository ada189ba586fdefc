"""Symbolic LRU cache analysis for loop programs with affine array accesses."""
from .bound import BoundReport, miss_bound
from .concrete import CacheConfig, collect_reachable, simulate, update_lru
from .ctx import CtxConfig, LoopCtx, alloc_budget, eval_mod, solve_ctx
from .loopfront import lower, parse_loop
from .mcr import AddRec, BinOp, Const, McrSession, normalize
from .must import AliasRel, solve
from .scfg import SymbolicCfg, parse_scfg, serialize_scfg, validate

__version__ = "0.1.0"

__all__ = [
    "AddRec", "AliasRel", "BinOp", "BoundReport", "CacheConfig", "Const", "CtxConfig", "LoopCtx", "McrSession",
    "SymbolicCfg", "alloc_budget", "collect_reachable", "eval_mod", "lower", "miss_bound", "normalize",
    "parse_loop", "parse_scfg", "serialize_scfg", "simulate", "solve", "solve_ctx", "update_lru", "validate",
]
