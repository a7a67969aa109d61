"""Scenarios, episode runner, metrics and plots."""
