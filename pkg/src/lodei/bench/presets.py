"""Named run configurations.

Full-scale presets use the benchmark sizes (NLS n = 1024, Allen-Cahn 2D
n = 256, NLS 3D n = 100, Allen-Cahn 3D n = 150).  Presets ending in
``-small`` are reduced twins that finish in seconds to a few minutes; their
errors differ from the full-scale ones (coarser lattices resolve the
solutions differently) but the convergence orders and the relative ordering
of the methods are the same.
"""
from __future__ import annotations

__all__ = ["PRESETS"]


def _nls2d(n, method, mode, rank, **kw):
    return dict(problem="nls2d", params={"n": n, "alpha": 0.1}, method=method, mode=mode, rank=rank, h=1e-3, T=1.0, **kw)


def _ac2d(n, method, mode, rank, **kw):
    base = dict(problem="allencahn2d", params={"n": n, "kappa": 0.01}, method=method, mode=mode, rank=rank, h=1e-2, T=10.0)
    base.update(kw)
    return base


PRESETS: dict[str, dict] = {
    "smoke": dict(problem="zero2d", params={"n": 32, "rank": 4}, method="prk2", mode="deim:qdeim", rank=4, h=0.1, T=1.0),
    # NLS 2D (timing and accuracy table at n = 1024)
    "nls2d-prk2-r6": _nls2d(1024, "prk2", "orthogonal", 6),
    "nls2d-prk2-arp-r6": _nls2d(1024, "prk2", "deim:arp", 6),
    "nls2d-prk2-qdeim-r6": _nls2d(1024, "prk2", "deim:qdeim", 6),
    "nls2d-prk3-r9": _nls2d(1024, "prk3", "orthogonal", 9),
    "nls2d-prk3-arp-r9": _nls2d(1024, "prk3", "deim:arp", 9),
    "nls2d-prk2-arp-r6-small": _nls2d(128, "prk2", "deim:arp", 6),
    # convergence study on the NLS lattice
    "nls2d-convergence": dict(
        problem="nls2d",
        params={"n": 128, "alpha": 0.1},
        rank=8,
        T=1.0,
        hs=[0.1, 0.05, 0.025, 0.0125, 0.00625],
        methods=["prk1", "prk2", "prk3"],
        modes=["orthogonal", "deim:arp"],
    ),
    # Allen-Cahn 2D with the exponential integrators
    "ac2d-perk1-r6": _ac2d(256, "perk1", "orthogonal", 6),
    "ac2d-perk2-r6": _ac2d(256, "perk2", "orthogonal", 6),
    "ac2d-perk2-srrqr-r6": _ac2d(256, "perk2", "deim:srrqr", 6),
    "ac2d-perk2-arp-r6": _ac2d(256, "perk2", "deim:arp", 6, seeds=5),
    "ac2d-perk2-arp-r6-small": _ac2d(64, "perk2", "deim:arp", 6, seeds=5),
    # Tucker NLS 3D convergence (fixed rank and varying rank panels)
    "nls3d-convergence": dict(
        problem="nls3d",
        params={"n": 100},
        method="tucker-prk1",
        rank=10,
        T=1.0,
        hs=[0.1, 0.05, 0.025, 0.0125],
        methods=["tucker-prk1", "tucker-prk2", "tucker-prk3"],
        modes=["deim:qdeim"],
    ),
    "nls3d-ranks": dict(
        problem="nls3d",
        params={"n": 100},
        method="tucker-prk3",
        rank=10,
        T=1.0,
        hs=[0.1, 0.05, 0.025],
        methods=["tucker-prk3"],
        modes=["orthogonal", "deim:qdeim"],
        ranks=[4, 6, 8, 10],
    ),
    "nls3d-convergence-small": dict(
        problem="nls3d",
        params={"n": 50},
        method="tucker-prk1",
        rank=10,
        T=1.0,
        hs=[0.1, 0.05, 0.025, 0.0125],
        methods=["tucker-prk1", "tucker-prk2", "tucker-prk3"],
        modes=["deim:qdeim"],
    ),
    # Allen-Cahn 3D in Tucker format
    "ac3d-tucker-prk2-r4": dict(
        problem="allencahn3d", params={"n": 150}, method="tucker-prk2", mode="orthogonal", rank=4, h=1e-3, T=1.0
    ),
    "ac3d-tucker-prk2-srrqr-r4": dict(
        problem="allencahn3d", params={"n": 150}, method="tucker-prk2", mode="deim:srrqr", rank=4, h=1e-3, T=1.0
    ),
    "ac3d-tucker-prk2-srrqr-r4-small": dict(
        problem="allencahn3d", params={"n": 50}, method="tucker-prk2", mode="deim:srrqr", rank=4, h=1e-3, T=1.0
    ),
    # selector statistics and the Allen-Cahn replay
    "selectors": dict(problem="allencahn2d", m=100, ranks=[2, 4, 6, 8, 10], trials=500),
    "selectors-replay": dict(
        problem="allencahn2d",
        params={"n": 64, "kappa": 0.01},
        rank=6,
        h=1e-3,
        T=10.0,
        output_every=100,
        ranks=[6],
        trials=100,
        m=64,
        replay=True,
    ),
    # differential-inclusion polytope examples
    "polytope-smallY": dict(example="smallY", rank=2),
    "polytope-tie4": dict(example="tie4", rank=2),
    "polytope-random": dict(example="random", rank=3),
}
