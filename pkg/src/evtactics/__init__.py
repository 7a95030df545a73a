"""Emergency-vehicle tactics on a multi-lane highway.

A small microscopic traffic simulator, a rule-based avoiding strategy for
background traffic, and a from-scratch deep Q-learning agent that drives the
emergency vehicle.
"""

__version__ = "0.1.0"
