"""Experiment harness: synthetic corpus, attacks, defense, end-to-end pipeline."""
