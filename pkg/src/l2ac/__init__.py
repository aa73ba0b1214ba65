"""Open-world learning by learning to accept classes."""
