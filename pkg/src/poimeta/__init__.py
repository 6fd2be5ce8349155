"""POI-conditioned spatio-temporal traffic flow forecasting toolkit.

Pipeline: rasterized road maps are partitioned into irregular regions
(`regions`), trajectory streams are aggregated into per-region 15-minute
inflow/outflow tensors (`flows`), per-region point-of-interest profiles
drive both a similarity graph (`poi_graph`) and per-region generated
attention parameters (`metablock`).  Host predictors (`hosts`) supply
pre-head features that the attention block refines into forecasts, and
`training` / `synthetic` provide a deterministic experiment harness with
a synthetic-city benchmark.
"""

__version__ = "0.1.0"
