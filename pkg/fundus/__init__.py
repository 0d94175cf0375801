"""fundus-engine: GreenBen fundus enhancement, preprocessing pipelines and DR/DME evaluation."""

__version__ = "0.1.0"
