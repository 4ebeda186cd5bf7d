"""
roadgraph — road-network extraction and evaluation from probability masks.

Turns road-probability rasters into geo-registered routable graphs (tiled for
city-scale inputs), and scores proposal graphs against ground truth with the
APLS and TOPO metrics.
"""

__version__ = "0.1.0"
