"""
I/O Package

Datasets, synthetic scenes, PLY clouds, reference meshes and saved maps.
"""
