"""Negatively reinforced urn schemes: exact limits, simulation, verification."""
