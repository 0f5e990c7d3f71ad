"""Experiment orchestration: configs, seeds, experiment runners, reports and the command line."""
