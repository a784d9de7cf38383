"""CatMiner: interestingness of categorical table attributes."""

__version__ = "1.0.0"
