"""Multi-tier trade dependency networks.

Reconstructs a tiered production network from bilateral trade flows and
statistically validated input-output links, computes dependency indicators
(exposure, import concentration, systemic trade risk, influence), derives
composite scores and revealed comparative advantage, clusters country-year
dependency profiles, and estimates the dependency -> RCA-growth regression.
"""

__version__ = "0.1.0"
