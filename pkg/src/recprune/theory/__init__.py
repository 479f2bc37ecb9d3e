"""Numerical checks of the pruning scaling law and the prune-rewind distance bound."""
