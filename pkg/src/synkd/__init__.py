"""Syntax distillation: tree-structured teachers -> sequential BiLSTM student."""

__version__ = "0.1.0"
