"""
fmselect - selection and estimation of fixed and random functional effects in
multilevel functional mixed models under spike-and-slab group-lasso priors.
"""

__version__ = "0.1.0"
