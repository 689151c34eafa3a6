"""Performance-driven tuning of hierarchical MPC (PID inner loop, MPC reference governor) by Bayesian optimization."""
