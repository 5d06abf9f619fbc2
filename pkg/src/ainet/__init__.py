"""ainet: attention-incorporate pooling layers in a small numpy network kit."""

__version__ = "0.1.0"
