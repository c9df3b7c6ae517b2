"""minmix: minimal mixed elasticity elements on uniform grids."""
