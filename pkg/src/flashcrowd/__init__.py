"""Flash-crowd file sharing: simulator, urn-and-ball models and limit laws."""

__version__ = "0.1.0"
