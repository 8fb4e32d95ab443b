"""Experiment orchestration: config files, telemetry CSVs, runs, reports and the CLI."""
