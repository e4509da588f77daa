"""Semi-supervised heading regression library."""
