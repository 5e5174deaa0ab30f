"""
Test package for the nexus runtime.

This package contains unit tests per module and end-to-end runs against
scripted model backends.
"""
