"""Crowd-motion mean-field solver: flow densities, value networks, operator."""

from ._mfgflow import *  # noqa: F401,F403
