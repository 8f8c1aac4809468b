"""Packaged defaults (``defaults.json``) shared by the command line and tests."""
from __future__ import annotations

import copy
import json
from functools import lru_cache
from importlib import resources


@lru_cache(maxsize=1)
def _load():
    return json.loads(resources.files("qdm").joinpath("defaults.json").read_text())


def load_defaults():
    """A fresh copy of the defaults document."""
    return copy.deepcopy(_load())
