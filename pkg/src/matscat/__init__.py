"""Matrix Schrödinger scattering: forward solvers, data extraction and Marchenko reconstruction."""
