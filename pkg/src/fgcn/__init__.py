"""Feedback graph convolutional networks for skeleton-based action recognition.

Everything is built on numpy: a small reverse-mode autograd engine
(:mod:`fgcn.tensor`), graph construction and partitioning (:mod:`fgcn.graph`),
sequence parsing and feature streams (:mod:`fgcn.data`), multi-stage temporal
sampling (:mod:`fgcn.sampling`), the staged feedback model (:mod:`fgcn.model`),
and an SGD training loop (:mod:`fgcn.training`). The ``fgcn`` console script
in :mod:`fgcn.cli` ties it together.
"""

__version__ = "0.1.0"
