"""Weakly supervised localization for compositional attribute-object
recognition, with a generalized seen/unseen evaluation protocol and a
synthetic cluttered-scene benchmark."""

__version__ = "0.1.0"
