"""Monte Carlo simulation of branching random walks."""
