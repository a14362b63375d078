"""Skill-DSL parsing, skill-sequence metrics and demonstration generation
for language-conditioned manipulation benchmarks."""

__version__ = "0.1.0"
