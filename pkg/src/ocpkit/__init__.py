"""Direct-collocation optimal control: modelling, transcription, solving, NMPC and benchmarking."""

__version__ = "0.1.0"
