"""Post-construction knowledge-base refinement engine.

Given a pre-built triple KB and a stream of user queries, localize likely
defects through a query-conditioned retrieval loop, abduce error causes,
generate and apply graph-edit actions, and score each refinement with the
gain-beyond-draft reward. All model calls go through a pluggable gateway
so the whole pipeline runs deterministically against scripted mocks.
"""

from .kb import EditOutcome, KnowledgeBase, Triple

__all__ = ["KnowledgeBase", "Triple", "EditOutcome"]
__version__ = "0.1.0"
