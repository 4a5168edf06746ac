"""
dephydro test suite
"""
