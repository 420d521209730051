"""Half-space Ising droplets: FK clusters, coarse graining and Winterbottom shapes."""

__version__ = "0.1.0"
