__all__ = ["engine", "flow", "analysis"]
__version__ = "0.1.0"
