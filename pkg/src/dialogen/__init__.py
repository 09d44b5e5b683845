"""dialogen: persona-conditioned conversation mining, modeling, and generation.

The pipeline runs comment dumps through conversation extraction, trains small
reference-conditioned transformer language models on the result, and serves
interactive multi-turn generation steered by per-speaker reference histories.
"""

__version__ = "0.1.0"
