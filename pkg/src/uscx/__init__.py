"""Computing with upper semicontinuous stochastic processes.

Marginal standardization of usc processes, GEV machinery, exact simulation
of simple max-stable usc fields and Monte Carlo checks of capacity
functionals.
"""

__version__ = "0.1.0"
