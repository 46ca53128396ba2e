"""tikzmill: corpus construction, compile/repair, reward, and evaluation toolkit for text-to-TikZ pipelines."""

__version__ = "0.1.0"
