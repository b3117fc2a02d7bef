"""tilebot: desk-scale arm teleoperation, demonstration collection, and
imitation-learning control for a sparse-reward tile-installation task."""

__version__ = "0.1.0"
