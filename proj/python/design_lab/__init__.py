"""Chair design lab: goal-aligned and goal-agnostic reward models, session
protocol, simulated designers and analysis."""

from ._core import *  # noqa: F401,F403
from ._core import ValidationError, EstimationError, SessionEndedError  # noqa: F401

import json as _json


def load_jsonl(text):
    """Parse a session log into (header, events) dictionaries."""
    lines = [_json.loads(line) for line in text.splitlines() if line.strip()]
    return lines[0], lines[1:]
