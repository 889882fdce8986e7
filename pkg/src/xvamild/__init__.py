"""Counterparty valuation adjustments under stochastic volatility.

The package is organised as a pipeline: gamma-tail primitives
(:mod:`xvamild.special`), volatility model families and measure changes
(:mod:`xvamild.volmodel`), path simulation (:mod:`xvamild.simulate`),
gamma-threshold default clocks (:mod:`xvamild.defaultclock`), the
nonlinear valuation driver (:mod:`xvamild.valuation`), and a
probabilistic fixed-point solver for the resulting semilinear PDE
(:mod:`xvamild.mildsolver`).  ``xvamild.cli`` wires the pieces into a
command-line tool.
"""

__version__ = "0.1.0"
