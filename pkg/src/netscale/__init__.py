"""Road-network travel-time calibration from trip records and a deterministic
mobility-on-demand fleet simulator built on top of it."""

__version__ = "0.1.0"
