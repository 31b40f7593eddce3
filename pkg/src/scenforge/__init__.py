"""Text or scenario file to trajectories, HD map, BEV rasters and multi-view conditions."""

__version__ = "0.1.0"
