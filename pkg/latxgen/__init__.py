"""LatXGen: posterior RGBD to lateral spine radiograph synthesis kit."""

__version__ = "0.1.0"
__license__ = "MIT"
