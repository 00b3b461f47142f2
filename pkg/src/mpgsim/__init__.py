"""Fleet-level goodput simulation: scheduling, runtime and program goodput from synthetic traces."""

__version__ = "0.1.0"
