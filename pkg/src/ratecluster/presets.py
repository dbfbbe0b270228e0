"""Per-dataset hyperparameter presets.

Values follow the published training recipes for each dataset; anything here
can be overridden by the config file or CLI flags.  Batch size is clamped to
the dataset size at use (small fixtures would otherwise yield zero batches).
"""

from __future__ import annotations

from .errors import ConfigError

# d, d_hidden, gamma, sinkhorn iters, epochs_init, epochs_total, batch size
PRESETS: dict[str, dict] = {
    "cifar10": dict(d=128, d_hidden=4096, gamma=0.175, sinkhorn_iters=5,
                    epochs_init=1, epochs_total=5, batch_size=1024),
    "cifar20": dict(d=128, d_hidden=4096, gamma=0.13, sinkhorn_iters=5,
                    epochs_init=1, epochs_total=15, batch_size=1024),
    "cifar100": dict(d=128, d_hidden=4096, gamma=0.1, sinkhorn_iters=5,
                     epochs_init=1, epochs_total=50, batch_size=1500),
    "imagenet1k": dict(d=1024, d_hidden=2048, gamma=0.12, sinkhorn_iters=5,
                       epochs_init=2, epochs_total=20, batch_size=1024),
    "coco": dict(d=128, d_hidden=4096, gamma=0.12, sinkhorn_iters=5,
                 epochs_init=1, epochs_total=20, batch_size=1200),
    "laion": dict(d=1024, d_hidden=2048, gamma=0.09, sinkhorn_iters=5,
                  epochs_init=2, epochs_total=20, batch_size=1024),
}

COMMON = dict(d_in=768, eps_sq=0.1, seed=0)

EVAL_CAP_DEFAULT = 15000
HEATMAP_CAP_DEFAULT = 2000


def preset_config(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    cfg = dict(COMMON)
    cfg.update(PRESETS[name])
    return cfg
