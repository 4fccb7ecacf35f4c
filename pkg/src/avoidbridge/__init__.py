"""avoidbridge: exact laws and scaling limits of walk bridges avoiding a finite set."""

__version__ = "0.1.0"
