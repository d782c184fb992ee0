"""Video annotation, dataset export and evaluation toolkit for cattle ID and behaviour recognition."""
