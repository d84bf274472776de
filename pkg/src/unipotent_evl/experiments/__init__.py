"""Experiment harness: configs, runs, empirical-vs-oracle statistics, CLI."""
