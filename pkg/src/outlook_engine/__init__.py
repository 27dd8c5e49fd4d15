"""Cross-sectional equity research engine.

Pipeline stages: panel ingestion and horizon returns, structured outlook
scoring, market-implied valuation metrics, cross-sectional and panel
inference, and constrained portfolio construction. Each stage is importable
on its own; the CLI (`outlook_engine.cli`) wires them together.
"""

__version__ = "0.1.0"
