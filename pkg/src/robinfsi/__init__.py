"""Partitioned fluid-structure interaction with a Robin interface condition.

Sub-packages and modules:

- ``geometry``: structured quad meshes, quadrature, interface extraction
- ``solid``: finite-strain Neo-Hookean solid with BDF1 time stepping
- ``fluid``: stabilized Navier-Stokes on a fixed grid and an added-mass surrogate
- ``nitsche``: interface force vectors and the interface mass matrix
- ``driver``: the two iterative coupling schemes and the time loop
- ``sdof``: the single-degree-of-freedom model problem
- ``analysis``: settling time, phase lag, frequency, stability probing
- ``scenarios`` / ``cli``: presets, configuration files and the command line
"""

__version__ = "0.1.0"
