"""transitmap: geographically accurate transit maps from GTFS feeds.

Pipeline stages: feed ingestion -> line-graph extraction by shared-segment
merging -> crossing/separation-minimal line ordering (ILP or built-in
search) -> SVG rendering.  Each stage is usable as a library and through
the `transitmap` command line tool.
"""

__version__ = "0.1.0"
