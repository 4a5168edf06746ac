"""
dephydro - directed exclusion process simulation and verification suite
Graphical-construction dynamics, coupling audits, conservation-law references and hydrodynamic-limit experiments
"""

__version__ = "0.1.0"
__author__ = "dephydro developers"
