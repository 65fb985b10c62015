"""Toolkit for multi-granularity, multi-aspect automatic pronunciation assessment.

Pipeline stages live in their own modules and talk to each other through
JSON-Lines files:

    corpus     -> ingest Speechocean762-style score files, rater QC
    promptgen  -> render scoring prompts for a TaskSpec
    client     -> submit prompts to an external scoring endpoint
    respparse  -> parse / serialize the structured score output
    prefsim    -> synthesize preference pairs for SimPO training
    simpo      -> SimPO + cross-entropy objective with a toy bigram scorer
    metrics    -> PCC / SCC / RMSE evaluation and reports
"""

__version__ = "0.1.0"

from .errors import ApaError  # noqa: F401
