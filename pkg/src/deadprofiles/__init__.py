"""Projections of deceased users' profiles on a social network, 2018-2100."""

__version__ = "0.1.0"
