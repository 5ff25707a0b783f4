"""Speculative non-interference toolkit for a small compiler IR.

Executable speculative semantics with attacker directives, bounded SNI
checking, dead code elimination and register allocation with validated
witnesses, a poison-tracking product analysis that finds and repairs the
Spectre weakness register allocation introduces, and bounded checks for
directive-transforming simulations.
"""

__version__ = "0.1.0"
