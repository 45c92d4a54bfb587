"""In-memory aggregate-join engine built on worst-case optimal joins.

Relations are stored as dictionary-encoded tries with side annotation
buffers; SQL queries translate to annotated hypergraphs, plan as
generalized hypertree decompositions, and execute one attribute at a time
with semiring aggregation. Dense linear-algebra inputs short-circuit to a
blocked kernel behind a pluggable dispatch point.
"""

__version__ = "0.1.0"
