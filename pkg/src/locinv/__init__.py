"""Layer-sensitivity analysis of quantum circuits by local inversion."""
