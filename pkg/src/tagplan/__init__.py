"""Planning fiducial tag placements that maximize drone localizability on construction sites."""

__version__ = "0.1.0"
