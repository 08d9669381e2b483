"""Dataset generation, training, evaluation and the command-line interface."""
