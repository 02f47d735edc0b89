"""nudgekit: knowledge-graph GNN recommendation engine for health nudging."""

__version__ = "0.1.0"
