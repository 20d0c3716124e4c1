"""Edge-node hardening planner.

Finds the edge nodes whose loss hurts a fairness-constrained workload
allocation the most, by solving the attacker-defender problem through LP
duality, KKT conditions or exhaustive enumeration.
"""

__version__ = "0.1.0"
