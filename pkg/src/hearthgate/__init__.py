"""hearthgate: a self-hostable home-network privacy gateway."""

__version__ = "0.1.0"
