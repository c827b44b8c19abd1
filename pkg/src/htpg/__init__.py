"""Test-pattern-generation toolkit for logic-testing-based hardware Trojan
detection: netlist profiling, reward-guided adaptive pattern search, Trojan
injection benchmarking, and mapping of finished test sets onto a cyclic
shift-register / OR-network on-chip pattern generator.
"""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, HtpgError, InternalError
from .netlist import Gate, Netlist, load_bench, parse_bench, serialize, unroll_sequential

__all__ = [
    "ConfigError",
    "DataError",
    "HtpgError",
    "InternalError",
    "Gate",
    "Netlist",
    "load_bench",
    "parse_bench",
    "serialize",
    "unroll_sequential",
    "__version__",
]
