"""Control-function estimation of structural functions in triangular models."""
