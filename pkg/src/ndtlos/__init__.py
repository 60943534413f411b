"""Digital-twin LoS/NLoS identification: synthetic channels, ADCPM inputs and classifiers."""

__version__ = "0.1.0"
