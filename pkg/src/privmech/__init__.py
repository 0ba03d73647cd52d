"""Privacy-level mechanisms for selling transaction data: a revenue-optimal
auction, a descending (Dutch) auction over price-privacy tuples, and a
two-sided posted-price marketplace, with brute-force oracles and a seeded
Monte Carlo harness."""

__version__ = "0.1.0"
