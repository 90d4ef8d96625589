from .model import (EQ, GE, INFEASIBLE, ITER_LIMIT, LE, OPTIMAL, UNBOUNDED, LpModel,
                    MilpModel, ModelBuilder, ModelError, SolveResult, dump_lp, load_lp)
from .lp import solve_lp
from .milp import MilpOptions, solve_milp

__all__ = [
    "EQ", "GE", "LE", "INFEASIBLE", "ITER_LIMIT", "OPTIMAL", "UNBOUNDED",
    "LpModel", "MilpModel", "ModelBuilder", "ModelError", "SolveResult",
    "MilpOptions", "dump_lp", "load_lp", "solve_lp", "solve_milp",
]
