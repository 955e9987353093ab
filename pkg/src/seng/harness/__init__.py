"""Experiment runners, data sources and the training CLI."""
