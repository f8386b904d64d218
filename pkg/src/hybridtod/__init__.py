"""Corpus engineering for task-oriented dialog with hybrid knowledge sources.

Builds a slot-value co-occurrence graph from dialogs, splits it with a
low-rank max-cut, and moves one side of the cut from the entity database
into templated FAQ documents.
"""

__version__ = "0.1.0"
