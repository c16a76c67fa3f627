# Configuration package for kvifflab
