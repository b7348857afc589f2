"Hyperparameter tuning of an attention-based hourly load forecaster"

__version__ = "0.1.0"
