"""LLM-driven evolutionary search over hybrid rewards and observation
enhancement for cooperative multi-agent particle tasks."""

__version__ = "0.1.0"
