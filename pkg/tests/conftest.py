import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "qpix", max_examples=40, deadline=None,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("qpix")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_unit(rng, n, complex_=False):
    v = rng.normal(size=n)
    if complex_:
        v = v + 1j * rng.normal(size=n)
    return v / np.linalg.norm(v)


def snapshot(directory):
    """File contents of a result directory with wall-clock fields removed."""
    import json
    from pathlib import Path

    out = {}
    for p in sorted(Path(directory).rglob("*")):
        if not p.is_file():
            continue
        data = p.read_bytes()
        if p.suffix == ".json":
            obj = json.loads(data)
            if isinstance(obj, dict):
                obj.pop("wallTimeSeconds", None)
            data = json.dumps(obj, sort_keys=True).encode()
        out[str(p.relative_to(directory))] = data
    return out
