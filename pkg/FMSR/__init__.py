__project__ = "FMSR"
__version__ = "0.1.0"
