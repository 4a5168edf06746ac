"""
dephydro source package
"""
