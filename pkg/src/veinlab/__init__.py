"""veinlab: veins, flows with staged true paths, and a copy construction
with its verifier."""

from .flow import StagePoint, eval_flow, true_path
from .vein import Vein, format_vein, parse_vein

__all__ = ["StagePoint", "Vein", "eval_flow", "format_vein", "parse_vein", "true_path"]
__version__ = "0.1.0"
