import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))


def pytest_collection_modifyitems(config, items):
    if os.environ.get("MBRLAB_NIGHTLY"):
        return
    skip = pytest.mark.skip(reason="nightly statistical check; set MBRLAB_NIGHTLY=1")
    for item in items:
        if "nightly" in item.keywords:
            item.add_marker(skip)
