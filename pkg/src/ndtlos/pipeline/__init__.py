"""Dataset generation, experiment configuration and the command-line entry point."""
