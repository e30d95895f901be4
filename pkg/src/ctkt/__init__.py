"""ctkt: desk-scale CTC sequence transduction with LM knowledge transfer."""

__version__ = "0.1.0"
