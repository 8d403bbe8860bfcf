"""Two-agent orchestration harness for open-world tasks.

An Evaluator discovers what "complete" means while a Planner pursues it.
The two never see each other's methods; they coordinate through a shared
workspace, and lessons from every run accumulate in an append-only
knowledge store that later runs (and other agent lineages) inherit.
"""

__version__ = "0.1.0"
