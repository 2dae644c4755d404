"""Document-level n-ary relation extraction.

The package splits extraction into two learned parts: a paragraph-local
relation detector over short sentence windows, and a document-global
argument-resolution graph that licenses substituting one mention for
another. Both are trained without manual labels, from a fact knowledge
base plus a handful of seed rules, and every extraction carries the
evidence chain that produced it.
"""

__version__ = "0.1.0"
