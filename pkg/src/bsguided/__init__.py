"""Birman-Schwinger analysis of guided states for Schroedinger operators
periodic in two directions and decaying in the third."""

__version__ = "0.1.0"
