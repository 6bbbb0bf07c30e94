"""Design validation and perception toolkit for a wedge-geometry visual-tactile sensor."""

__version__ = "0.1.0"
