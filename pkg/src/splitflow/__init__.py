"""Random splitting Markov chains with exactly integrable flows.

Modules: ``elliptic`` (Jacobi elliptic functions), ``core`` (chain engine),
``lorenz96`` and ``euler`` (model splittings), ``analysis`` (Monte Carlo
diagnostics) and ``cli`` (experiment runner).
"""

__version__ = "0.1.0"
