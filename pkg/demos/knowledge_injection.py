"""Compare a run on the 12-feature benchmark with and without domain knowledge.

Takes about a minute. The knowledge is partly wrong on purpose (h3 and h4
are not the only useful features), mirroring how hints are used in practice.
"""

import time

from eqdetect import KnowledgeConfig
from eqdetect.benchmark import desk_config, desk_data
from eqdetect.pipeline import run_pipeline

knowledge = KnowledgeConfig(
    group_ranges=(1, 2, 3, 4, (5, 6), 7, 8, (9, 10), 11, 12),
    loss_formula="0.5*l1 + 0.5*l2/linf",
    feature_weights={"h3": 2.0, "h4": 2.0, "h7": 2.0, "h8": 2.0},
    quota=("h3", 0.8),
    required_features=("h1",),
)

data = desk_data("E", seed=3)
cfg = desk_config("E", seed=3)
for label, kn in (("no knowledge", None), ("all knowledge", knowledge)):
    t0 = time.perf_counter()
    rep = run_pipeline(data, cfg, kn)
    lv = rep.lv_sr or {}
    print(f"{label:>14}: {rep.equation}  (found after {lv.get('found_at')} candidates, "
          f"{time.perf_counter() - t0:.1f} s)")
