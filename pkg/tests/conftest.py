import os

import numpy as np
import pytest
import scipy.linalg as la


def pytest_collection_modifyitems(config, items):
    if os.environ.get("LODEI_EXTENDED") == "1":
        return
    skip = pytest.mark.skip(reason="extended check; set LODEI_EXTENDED=1 to run")
    for item in items:
        if "extended" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def cache_dir():
    """Reference cache shared across test sessions (override with LODEI_CACHE)."""
    from lodei.bench.references import default_cache_dir

    return default_cache_dir()


def orthonormal(rng, m, r, complex_=False):
    X = rng.standard_normal((m, r))
    if complex_:
        X = X + 1j * rng.standard_normal((m, r))
    return la.qr(X, mode="economic")[0]


def random_factored(rng, m, n, r, complex_=False, decay=None):
    from lodei.kernels import FactoredMatrix

    s = np.sort(rng.uniform(0.5, 2.0, r))[::-1] if decay is None else decay ** np.arange(r)
    dtype = complex if complex_ else float
    return FactoredMatrix(orthonormal(rng, m, r, complex_), np.diag(s).astype(dtype), orthonormal(rng, n, r, complex_))


def rel(a, b):
    return np.linalg.norm(np.asarray(a) - np.asarray(b)) / max(np.linalg.norm(np.asarray(b)), 1e-300)
