"""
Synthetic grouped data and numerical checks of the penalized scores'
behaviour on it.
"""
