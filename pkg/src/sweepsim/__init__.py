"""Exact simulation of a fixed-size population accumulating beneficial
mutations, with observables, auxiliary branching processes, couplings and a
statistical verification harness."""

__version__ = "0.1.0"
