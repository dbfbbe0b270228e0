"""Command-line surface over the whole pipeline.

One process per command; every command is deterministic given its inputs and
seed.  Structured outputs are JSON, curves and logs are CSV, and partial
files are never left behind (writers go through a temp name and rename).
Exit codes: 0 success, 2 configuration error, 3 data/file error,
4 numerical failure.  The only environment influence is ``RATECLUSTER_LOG``
for log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import captioning, heads, metrics, selection, spectral, trainer
from .errors import (
    ConfigError,
    NumericalError,
    RateClusterError,
    ValidationError,
)
from .presets import EVAL_CAP_DEFAULT, HEATMAP_CAP_DEFAULT, preset_config
from .rates import RateConfig
from .store import DatasetManifest, EmbeddingMatrix, read_embeddings, subsample_eval, write_embeddings
from .synthetic import SubspaceSpec, gen_subspaces
from .trainer import TrainConfig, TrainState

log = logging.getLogger("ratecluster")


def _write_json(payload, path: str | Path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
    tmp.replace(path)


PATH_KEYS = ("embeddings", "checkpoint", "log_csv", "labels", "eval_cap")


def load_pipeline_config(path: str | Path) -> tuple[TrainConfig, dict]:
    """Read a config JSON: optional preset, TrainConfig overrides, and paths.

    Unknown keys are rejected so typos cannot silently fall back to
    defaults; the config file fully determines the run.
    """
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    base = preset_config(raw["preset"]) if "preset" in raw else dict()
    field_names = set(TrainConfig.__dataclass_fields__)
    unknown = set(raw) - field_names - set(PATH_KEYS) - {"preset"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    overrides = {k: v for k, v in raw.items() if k in field_names}
    merged = {**base, **overrides}
    try:
        cfg = TrainConfig(**merged)
    except TypeError as exc:
        raise ConfigError(f"bad training config: {exc}") from exc
    paths = {k: raw[k] for k in PATH_KEYS if k in raw}
    if "embeddings" not in paths:
        raise ConfigError("config must name an 'embeddings' file")
    return cfg, paths


def _load_inputs(cfg: TrainConfig, paths: dict) -> tuple[np.ndarray, TrainConfig]:
    m = read_embeddings(paths["embeddings"])
    if m.d != cfg.d_in:
        raise ConfigError(f"config d_in={cfg.d_in} but embeddings have d={m.d}")
    if cfg.batch_size > m.n:
        log.info("clamping batch size %d to dataset size %d", cfg.batch_size, m.n)
        cfg = TrainConfig(**{**_cfg_dict(cfg), "batch_size": m.n})
    return m.as_float64().T, cfg


def _cfg_dict(cfg: TrainConfig) -> dict:
    from dataclasses import asdict

    return asdict(cfg)


def _progress_logger(every: int = 10):
    def cb(row):
        if row["step"] % every == 0:
            log.info(
                "%s epoch %d step %d: R=%.4f Rc=%.4f dR=%.4f",
                row["phase"], row["epoch"], row["step"], row["R"], row["Rc"], row["dR"],
            )

    return cb


def cmd_gen(args) -> int:
    spec = SubspaceSpec(
        k=args.k,
        dims=args.dims,
        ambient=args.ambient,
        points_per_cluster=args.points_per_cluster,
        noise_sigma=args.noise_sigma,
        seed=args.seed,
    )
    m, labels = gen_subspaces(spec)
    write_embeddings(m, args.out)
    DatasetManifest(embedding_path=str(args.out), labels=[int(l) for l in labels]).save(
        str(args.out) + ".json"
    )
    print(f"wrote {m.n}x{m.d} embeddings and labels to {args.out}")
    return 0


def cmd_warmup(args) -> int:
    cfg, paths = load_pipeline_config(args.config)
    X, cfg = _load_inputs(cfg, paths)
    state = trainer.init_state(cfg)
    trainer.warmup(state, X, cfg, _progress_logger())
    out = paths.get("checkpoint", "warmup.ckpt")
    trainer.save_checkpoint(state, cfg, out)
    if "log_csv" in paths:
        trainer.write_log_csv(state.log_rows, paths["log_csv"])
    print(f"warmup complete after epoch {state.epoch}; checkpoint at {out}")
    return 0


def cmd_train(args) -> int:
    cfg, paths = load_pipeline_config(args.config)
    X, cfg = _load_inputs(cfg, paths)
    state = None
    if args.resume:
        state, saved_cfg = trainer.load_checkpoint(args.resume)
        if _cfg_dict(saved_cfg) != _cfg_dict(cfg):
            raise ConfigError("resume checkpoint was produced under a different config")
    state = trainer.run_training(X, cfg, _progress_logger(), state=state)
    out = paths.get("checkpoint", "train.ckpt")
    trainer.save_checkpoint(state, cfg, out)
    if "log_csv" in paths:
        trainer.write_log_csv(state.log_rows, paths["log_csv"])
    print(f"training complete after epoch {state.epoch}; checkpoint at {out}")
    return 0


def _forward_inference(state: TrainState, m: EmbeddingMatrix, head: str, block: int = 4096):
    X = m.as_float64().T
    outputs = []
    for lo in range(0, X.shape[1], block):
        Z, C, _ = heads.forward(state.params, X[:, lo : lo + block], training=False)
        outputs.append(Z if head == "feature" else C)
    return np.concatenate(outputs, axis=1)


def cmd_embed(args) -> int:
    state, _ = trainer.load_checkpoint(args.ckpt)
    m = read_embeddings(args.infile)
    out = _forward_inference(state, m, args.head)
    write_embeddings(EmbeddingMatrix(data=out.T, ids=m.ids), args.out)
    print(f"wrote refined {args.head} embeddings for {m.n} samples to {args.out}")
    return 0


def _evaluation_membership(state: TrainState, cfg: TrainConfig, m: EmbeddingMatrix, cap: int, seed: int):
    sub, indices = subsample_eval(m, cap, seed)
    C = _forward_inference(state, sub, "cluster")
    Pi = spectral.build_affinity(C, cfg.gamma)
    return sub, indices, Pi


def cmd_cluster(args) -> int:
    state, cfg = trainer.load_checkpoint(args.ckpt)
    m = read_embeddings(args.infile)
    sub, indices, Pi = _evaluation_membership(state, cfg, m, args.cap, args.seed)
    assignment = spectral.spectral_cluster(Pi, args.k, args.seed)
    assignment.save(args.out, indices=indices if len(indices) != m.n else None)
    print(f"clustered {sub.n} samples into {args.k} groups; labels at {args.out}")
    return 0


def cmd_select_k(args) -> int:
    state, cfg = trainer.load_checkpoint(args.ckpt)
    m = read_embeddings(args.infile)
    sub, indices, Pi = _evaluation_membership(state, cfg, m, args.cap, args.seed)
    Z = _forward_inference(state, sub, "feature")
    curve, _ = selection.select_k(
        Z, Pi, args.max_k, RateConfig(eps_sq=cfg.eps_sq, feature_dim=cfg.d), args.seed
    )
    selection.export_curve(curve, args.out, svg_path=args.svg)
    print(f"coding-length argmin over K={args.max_k}: k = {curve.argmin_k}")
    return 0


def _load_labels_json(path: str | Path) -> tuple[np.ndarray, int, list[int] | None]:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    return np.asarray(raw["labels"], dtype=np.int64), int(raw["k"]), raw.get("indices")


def cmd_caption(args) -> int:
    labels, _, indices = _load_labels_json(args.labels)
    img = read_embeddings(args.img)
    txt = read_embeddings(args.txt)
    with open(args.candidates, "r", encoding="utf-8") as fh:
        cand_raw = json.load(fh)
    candidates = cand_raw["text_candidates"] if isinstance(cand_raw, dict) else list(cand_raw)
    if len(candidates) != txt.n:
        raise ValidationError(f"{len(candidates)} candidates for {txt.n} text embeddings")
    rows = img.as_float64()
    if indices is not None:
        rows = rows[indices]
    if rows.shape[0] != labels.shape[0]:
        raise ValidationError(f"{labels.shape[0]} labels for {rows.shape[0]} image embeddings")
    report = captioning.caption_report(labels, rows, txt.as_float64(), candidates, args.top_m)
    _write_json(report, args.out)
    print(f"captioned {len(report)} clusters; report at {args.out}")
    return 0


def cmd_search(args) -> int:
    repo = read_embeddings(args.repo)
    if not (0 <= args.query_index < repo.n):
        raise ValidationError(f"query index {args.query_index} outside [0, {repo.n})")
    data = repo.as_float64()
    hits = captioning.image_search(data[args.query_index], data, args.top, args.metric)
    payload = [{"index": i, "distance": d} for i, d in hits]
    if args.out:
        _write_json(payload, args.out)
    else:
        json.dump(payload, sys.stdout, indent=1)
        print()
    return 0


def cmd_eval(args) -> int:
    pred, _, indices = _load_labels_json(args.pred)
    manifest = DatasetManifest.load(args.truth)
    if manifest.labels is None:
        raise ValidationError(f"{args.truth} carries no ground-truth labels")
    truth = np.asarray(manifest.labels, dtype=np.int64)
    if indices is not None:
        truth = truth[indices]
    report = metrics.evaluation_report(pred, truth, args.nmi_variant)
    if args.out:
        _write_json(report, args.out)
    json.dump(report, sys.stdout)
    print()
    return 0


def cmd_kmeans_baseline(args) -> int:
    m = read_embeddings(args.infile)
    sub, indices = subsample_eval(m, args.cap, args.seed)
    assignment = spectral.kmeans(sub.as_float64(), args.k, args.seed)
    assignment.save(args.out, indices=indices if sub.n != m.n else None)
    print(f"k-means baseline over {sub.n} samples, k={args.k}; labels at {args.out}")
    return 0


def _rows_matching_labels(args) -> tuple[np.ndarray, np.ndarray]:
    """Load embeddings + labels, honoring a subsample index map in the labels."""
    m = read_embeddings(args.infile)
    labels, _, indices = _load_labels_json(args.labels)
    data = m.as_float64()
    if indices is not None and labels.shape[0] != m.n:
        data = data[indices]
    if labels.shape[0] != data.shape[0]:
        raise ValidationError(f"{labels.shape[0]} labels for {data.shape[0]} samples")
    return data, labels


def cmd_heatmap(args) -> int:
    data, labels = _rows_matching_labels(args)
    if data.shape[0] > args.cap:
        sub, sel = subsample_eval(EmbeddingMatrix(data=data), args.cap, args.seed)
        data, labels = sub.as_float64(), labels[sel]
    M, gray = captioning.similarity_heatmap(data.T, labels, cap=args.cap)
    csv_tmp = Path(args.out + ".csv.tmp")
    np.savetxt(csv_tmp, M, delimiter=",", fmt="%.8f")
    csv_tmp.replace(args.out + ".csv")
    pgm_tmp = Path(args.out + ".pgm.tmp")
    captioning.write_pgm(gray, pgm_tmp)
    pgm_tmp.replace(args.out + ".pgm")
    print(f"wrote {M.shape[0]}x{M.shape[1]} similarity heatmap to {args.out}.csv/.pgm")
    return 0


def cmd_spectra(args) -> int:
    data, labels = _rows_matching_labels(args)
    spectra = captioning.spectrum_by_cluster(data.T, labels)
    out = Path(args.out)
    tmp = out.with_name(out.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write("cluster,rank,normalized_singular_value\n")
        for cluster, values in spectra.items():
            for rank, v in enumerate(values):
                fh.write(f"{cluster},{rank},{v:.17g}\n")
    tmp.replace(out)
    print(f"wrote per-cluster spectra for {len(spectra)} clusters to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ratecluster", description=__doc__)
    p.add_argument("--deterministic", action="store_true",
                   help="restrict linear algebra to one thread for bitwise reproducibility")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate union-of-orthogonal-subspace test data")
    g.add_argument("--k", type=int, required=True)
    g.add_argument("--dims", type=int, default=2)
    g.add_argument("--ambient", type=int, required=True)
    g.add_argument("--points-per-cluster", type=int, required=True)
    g.add_argument("--noise-sigma", type=float, default=0.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    w = sub.add_parser("warmup", help="rate-expansion warmup phase")
    w.add_argument("--config", required=True)
    w.set_defaults(func=cmd_warmup)

    t = sub.add_parser("train", help="full warmup + joint training")
    t.add_argument("--config", required=True)
    t.add_argument("--resume")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("embed", help="refine embeddings through a trained head")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--in", dest="infile", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--head", choices=["feature", "cluster"], default="feature")
    e.set_defaults(func=cmd_embed)

    c = sub.add_parser("cluster", help="spectral clustering on the learned membership")
    c.add_argument("--ckpt", required=True)
    c.add_argument("--in", dest="infile", required=True)
    c.add_argument("--k", type=int, required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--cap", type=int, default=EVAL_CAP_DEFAULT)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_cluster)

    s = sub.add_parser("select-k", help="coding-length model selection curve")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--in", dest="infile", required=True)
    s.add_argument("--max-k", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--svg")
    s.add_argument("--cap", type=int, default=EVAL_CAP_DEFAULT)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_select_k)

    cap = sub.add_parser("caption", help="vote captions for labeled clusters")
    cap.add_argument("--labels", required=True)
    cap.add_argument("--img", required=True)
    cap.add_argument("--txt", required=True)
    cap.add_argument("--candidates", required=True)
    cap.add_argument("--out", required=True)
    cap.add_argument("--top-m", type=int, default=5)
    cap.set_defaults(func=cmd_caption)

    se = sub.add_parser("search", help="nearest neighbors of a repository row")
    se.add_argument("--repo", required=True)
    se.add_argument("--query-index", type=int, required=True)
    se.add_argument("--top", type=int, default=64)
    se.add_argument("--metric", choices=["euclidean", "cosine"], default="euclidean")
    se.add_argument("--out")
    se.set_defaults(func=cmd_search)

    ev = sub.add_parser("eval", help="accuracy and NMI against ground truth")
    ev.add_argument("--pred", required=True)
    ev.add_argument("--truth", required=True)
    ev.add_argument("--nmi-variant", choices=["sqrt", "arithmetic", "max"], default="sqrt")
    ev.add_argument("--out")
    ev.set_defaults(func=cmd_eval)

    kb = sub.add_parser("kmeans-baseline", help="k-means directly on stored embeddings")
    kb.add_argument("--in", dest="infile", required=True)
    kb.add_argument("--k", type=int, required=True)
    kb.add_argument("--out", required=True)
    kb.add_argument("--cap", type=int, default=EVAL_CAP_DEFAULT)
    kb.add_argument("--seed", type=int, default=0)
    kb.set_defaults(func=cmd_kmeans_baseline)

    hm = sub.add_parser("heatmap", help="|Z^T Z| cosine-similarity heatmap (CSV + PGM)")
    hm.add_argument("--in", dest="infile", required=True)
    hm.add_argument("--labels", required=True)
    hm.add_argument("--out", required=True, help="output prefix")
    hm.add_argument("--cap", type=int, default=HEATMAP_CAP_DEFAULT)
    hm.add_argument("--seed", type=int, default=0)
    hm.set_defaults(func=cmd_heatmap)

    sp = sub.add_parser("spectra", help="per-cluster normalized singular values (CSV)")
    sp.add_argument("--in", dest="infile", required=True)
    sp.add_argument("--labels", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_spectra)

    return p


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("RATECLUSTER_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.deterministic:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=1):
                return args.func(args)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"error: numerical: {exc}", file=sys.stderr)
        return 4
    except (RateClusterError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
