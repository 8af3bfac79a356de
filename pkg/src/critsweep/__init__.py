# temporary minimal init while modules are under construction
__version__ = "0.1.0"
