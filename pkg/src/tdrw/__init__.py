"""Random walks among time-dependent conductances."""
