"""
Constants package for the nexus runtime.

This package contains enums, controlled vocabularies, regular expressions,
defaults and prompt templates used throughout the project.
"""
