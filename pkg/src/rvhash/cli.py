"""Command-line pipeline: train / hash / search / eval / gradcheck.

Configuration is a flat UTF-8 key=value file; '#' starts a comment.
Unknown keys are rejected with their line number; every consumed key is
echoed (with its effective value) to <out_dir>/config_echo.cfg for
provenance. Exit codes: 0 success, 1 usage/config error, 2 data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import evaluation as E
from . import retrieval as R
from .data import (
    LabeledDataset,
    SplitSpec,
    read_idx,
    read_rvf,
    split_and_sample,
    write_rvf,
)
from .errors import ConfigError, DataError, NumericError, RvhashError, ShapeError
from .gradcheck import THRESHOLD, run_suite
from .loss import LossConfig
from .model import HASH_VARIANTS, ModelConfig, VARIANTS, model_forward
from .train import (
    TrainConfig,
    load_checkpoint,
    restore,
    save_checkpoint,
    train,
    write_epoch_log,
)


def _parse_bool(s: str) -> bool:
    if s.lower() in ("true", "1", "yes"):
        return True
    if s.lower() in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _parse_int_list(s: str) -> tuple[int, ...]:
    s = s.strip()
    if not s:
        return ()
    return tuple(int(part) for part in s.split(","))


def _parse_choice(options):
    def parse(s: str) -> str:
        if s not in options:
            raise ValueError(f"expected one of {options}, got {s!r}")
        return s
    return parse


SCHEMA = {
    # model
    "variant": (_parse_choice(VARIANTS), "random_vlad"),
    "vlad_style": (_parse_choice(("random", "netvlad")), "random"),
    "clusters": (int, 8),
    "code_bits": (int, 32),
    "d1": (int, 1024),
    "d2": (int, 1024),
    "alpha0": (float, 1.0),
    "transform_enabled": (_parse_bool, True),
    "predict_activation": (_parse_choice(("softmax", "sigmoid")), "softmax"),
    # loss
    "loss_alpha": (float, 1.0),
    "loss_beta": (float, 1.0),
    "loss_p": (int, 2),
    "weight_decay": (float, 5e-4),
    "e3_enabled": (_parse_bool, False),
    "e3_weight": (float, 1.0),
    # training
    "epochs": (int, 50),
    "batch_size": (int, 64),
    "learning_rate": (float, 0.01),
    "momentum": (float, 0.9),
    "lr_decay_epochs": (_parse_int_list, (40,)),
    "freeze_backbone": (_parse_bool, False),
    "dtype": (_parse_choice(("float64", "float32")), "float64"),
    # data
    "data_format": (_parse_choice(("idx", "rvf")), "idx"),
    "images": (str, ""),
    "labels": (str, ""),
    "features": (str, ""),
    "sample_limit": (int, 0),
    "train_fraction": (float, 5.0 / 6.0),
    "query_count": (int, 1000),
    "include_self": (_parse_bool, False),
    # run
    "seed": (int, 42),
    "out_dir": (str, "run"),
}


def load_config(path) -> dict:
    """Parse a key=value config file against the schema."""
    values = {k: default for k, (_, default) in SCHEMA.items()}
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {raw.strip()!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in SCHEMA:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        parser, _ = SCHEMA[key]
        try:
            values[key] = parser(val)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from exc
    return values


def config_echo_text(cfg: dict, skip: tuple[str, ...] = ()) -> str:
    out = []
    for key in sorted(cfg):
        if key in skip:
            continue
        v = cfg[key]
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        out.append(f"{key} = {v}")
    return "\n".join(out) + "\n"


def _load_dataset(cfg: dict) -> LabeledDataset:
    if cfg["data_format"] == "idx":
        if not cfg["images"] or not cfg["labels"]:
            raise ConfigError("data_format=idx needs the 'images' and 'labels' keys")
        return read_idx(cfg["images"], cfg["labels"])
    if not cfg["features"]:
        raise ConfigError("data_format=rvf needs the 'features' key")
    return read_rvf(cfg["features"])


def _split(cfg: dict, ds: LabeledDataset):
    spec = SplitSpec(
        seed=cfg["seed"],
        train_fraction=cfg["train_fraction"],
        query_count=cfg["query_count"],
        sample_limit=cfg["sample_limit"],
    )
    return split_and_sample(ds, spec)


def _model_config(cfg: dict, ds: LabeledDataset) -> ModelConfig:
    return ModelConfig(
        variant=cfg["variant"],
        input_shape=ds.sample_shape,
        input_kind="image" if ds.kind == "image" else "features",
        n_classes=ds.n_classes,
        clusters=cfg["clusters"],
        code_bits=cfg["code_bits"],
        d1=cfg["d1"],
        d2=cfg["d2"],
        alpha0=cfg["alpha0"],
        vlad_style=cfg["vlad_style"],
        transform_enabled=cfg["transform_enabled"],
        predict_activation=cfg["predict_activation"],
        dtype=cfg["dtype"],
    )


def _loss_config(cfg: dict) -> LossConfig:
    return LossConfig(
        loss_alpha=cfg["loss_alpha"],
        loss_beta=cfg["loss_beta"],
        weight_decay=cfg["weight_decay"],
        p=cfg["loss_p"],
        e3_enabled=cfg["e3_enabled"],
        e3_weight=cfg["e3_weight"],
    )


def _train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(
        epochs=cfg["epochs"],
        batch_size=cfg["batch_size"],
        learning_rate=cfg["learning_rate"],
        momentum=cfg["momentum"],
        lr_decay_epochs=cfg["lr_decay_epochs"],
        seed=cfg["seed"],
        freeze_backbone=cfg["freeze_backbone"],
    )


def _apply_overrides(cfg: dict, args) -> dict:
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "out", None):
        cfg["out_dir"] = args.out
    return cfg


def cmd_train(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    ds = _load_dataset(cfg)
    split = _split(cfg, ds)
    model_cfg = _model_config(cfg, split.train)
    out_dir = cfg["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    echo = config_echo_text(cfg)
    with open(os.path.join(out_dir, "config_echo.cfg"), "w", encoding="utf-8") as f:
        f.write(echo)
    result = train(
        split.train,
        model_cfg,
        _train_config(cfg),
        _loss_config(cfg),
        val_ds=split.database,
        epoch_callback=lambda s: print(
            f"epoch {s.epoch}: objective={s.objective:.6f} e1={s.e1:.6f} "
            f"e2={s.e2:.6f} val_top1={s.val_top1:.4f}",
            flush=True,
        ),
    )
    # the checkpoint echo omits out_dir so reruns into different directories
    # stay byte-identical
    save_checkpoint(
        os.path.join(out_dir, "checkpoint.rvck"),
        result,
        config_text=config_echo_text(cfg, skip=("out_dir",)),
    )
    write_epoch_log(os.path.join(out_dir, "train_log.tsv"), result.log)
    E.write_top1(os.path.join(out_dir, "top1.tsv"), result.log[-1].val_top1)
    return 0


def _forward_codes(ds: LabeledDataset, params, model_cfg: ModelConfig) -> np.ndarray:
    chunks = []
    for lo in range(0, len(ds), 256):
        out = model_forward(ds.samples[lo : lo + 256], params, model_cfg)
        chunks.append(out.codes)
    if not chunks:
        return np.zeros((0, model_cfg.code_dim))
    return np.concatenate(chunks)


def cmd_hash(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    ds = _load_dataset(cfg)
    split = _split(cfg, ds)
    subset = {
        "train": (split.train, None),
        "database": (split.database, None),
        "queries": (split.queries, split.query_db_ids),
    }[args.split]
    part, explicit_ids = subset
    model_cfg = _model_config(cfg, part if len(part) else split.train)
    ckpt = load_checkpoint(args.checkpoint)
    state = restore(ckpt, model_cfg)
    codes = _forward_codes(part, state.params, model_cfg)
    ids = (
        explicit_ids
        if explicit_ids is not None
        else np.arange(len(part), dtype=np.uint64)
    )
    if model_cfg.code_kind == "binary":
        words = (
            R.binarize_batch(codes)
            if len(codes)
            else np.zeros((0, R.words_per_code(model_cfg.code_bits)), dtype=np.uint64)
        )
        db = R.CodeDatabase(
            length=model_cfg.code_bits,
            ids=ids,
            labels=part.labels.astype(np.uint32),
            words=words,
        )
        R.write_codes(args.out, db)
    else:
        vec_ds = LabeledDataset(
            samples=np.asarray(codes, dtype=np.float32).reshape(len(part), 1, 1, -1),
            labels=part.labels,
            n_classes=ds.n_classes,
            kind="features",
            source=f"codes:{args.split}",
        )
        write_rvf(args.out, vec_ds)
    print(f"wrote {len(part)} codes to {args.out}")
    return 0


def _sniff_format(path) -> str:
    with open(path, "rb") as f:
        magic = f.read(4)
    if magic == R.RVHC_MAGIC:
        return "rvhc"
    if magic == b"RVF1":
        return "rvf"
    raise DataError(f"unrecognized code file magic {magic!r} in {path}")


def _load_real_codes(path):
    ds = read_rvf(path)
    return ds.samples.reshape(len(ds), -1), ds.labels


def cmd_eval(args) -> int:
    include_self = False
    query_ids = None
    if args.config:
        cfg = load_config(args.config)
        include_self = cfg["include_self"]
    fmt = _sniff_format(args.db)
    if _sniff_format(args.queries) != fmt:
        raise DataError("database and query files must share a format")
    os.makedirs(args.out, exist_ok=True)

    results = []
    per_query: list[tuple[int, float | None]] = []
    excluded = 0
    if fmt == "rvhc":
        db = R.read_codes(args.db)
        queries = R.read_codes(args.queries)
        if db.length != queries.length:
            raise DataError(
                f"code length mismatch: db has {db.length} bits, queries have {queries.length}"
            )
        for i in range(len(queries)):
            qid = int(queries.ids[i])
            res = R.rank_all(
                queries.code(i),
                db,
                int(queries.labels[i]),
                query_id=qid,
                exclude_id=None if include_self else qid,
            )
            _collect(res, results, per_query)
    else:
        if args.config:
            ds = _load_dataset(cfg)
            split = _split(cfg, ds)
            query_ids = split.query_db_ids
        db_vecs, db_labels = _load_real_codes(args.db)
        q_vecs, q_labels = _load_real_codes(args.queries)
        if db_vecs.shape[1] != q_vecs.shape[1]:
            raise DataError(
                f"vector dim mismatch: db {db_vecs.shape[1]} vs queries {q_vecs.shape[1]}"
            )
        if query_ids is None and not include_self:
            print(
                "note: real-valued eval without --config cannot identify queries "
                "in the database; no self-exclusion applied",
                file=sys.stderr,
            )
        db_ids = np.arange(len(db_vecs), dtype=np.uint64)
        for i in range(len(q_vecs)):
            qid = int(query_ids[i]) if query_ids is not None else -1
            res = R.rank_all_real(
                q_vecs[i],
                db_vecs,
                db_ids,
                db_labels,
                int(q_labels[i]),
                metric=args.metric,
                query_id=qid,
                exclude_id=None if (include_self or qid < 0) else qid,
            )
            _collect(res, results, per_query)

    excluded = sum(1 for _, ap in per_query if ap is None)
    if not results:
        raise DataError("every query was excluded (no relevant items); mAP undefined")
    aps = [ap for _, ap in per_query if ap is not None]
    map_value = E.mean_ap(aps)
    E.write_pr_curve(os.path.join(args.out, "pr_curve.tsv"), E.pr_curve(results))
    E.write_map(os.path.join(args.out, "map.tsv"), per_query, map_value)
    if excluded:
        print(f"excluded {excluded} queries with no relevant database items", file=sys.stderr)
    print(f"mAP\t{map_value!r}")
    return 0


def _collect(res, results, per_query) -> None:
    if res.relevant.sum() == 0:
        per_query.append((res.query_id, None))
    else:
        results.append(res)
        per_query.append((res.query_id, E.average_precision(res)))


def cmd_search(args) -> int:
    fmt = _sniff_format(args.db)
    if fmt != "rvhc":
        raise DataError("search supports packed binary code files (RVHC)")
    db = R.read_codes(args.db)
    queries = R.read_codes(args.queries)
    if not (0 <= args.index < len(queries)):
        raise ConfigError(f"--index must be in [0, {len(queries)}), got {args.index}")
    res = R.rank_all(
        queries.code(args.index),
        db,
        int(queries.labels[args.index]),
        query_id=int(queries.ids[args.index]),
    )
    top = min(args.top, len(res))
    print("rank\tdb_id\tdistance\tlabel_match")
    for r in range(top):
        print(f"{r + 1}\t{res.ids[r]}\t{res.distances[r]}\t{int(res.relevant[r])}")
    return 0


def cmd_gradcheck(args) -> int:
    results = run_suite(seeds=range(args.seeds), corrupt=args.corrupt)
    failed = False
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name}\t{r.max_rel_error:.3e}\t{status}")
        failed |= not r.passed
    if failed:
        raise NumericError(f"gradient checks exceeded threshold {THRESHOLD}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rvhash", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="override out_dir")
    p.add_argument("--seed", type=int, help="override seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("hash", help="emit codes for a data split")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "database", "queries"), default="database")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, help="override seed")
    p.set_defaults(func=cmd_hash)

    p = sub.add_parser("search", help="rank one query against a code database")
    p.add_argument("--db", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--top", type=int, default=10)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("eval", help="precision-recall and mAP for code files")
    p.add_argument("--db", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="config for include_self and real-vector query ids")
    p.add_argument("--metric", choices=("cosine", "euclidean"), default="cosine",
                   help="distance for real-valued code files")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every gradient path")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--corrupt", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (DataError, ShapeError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, ValueError) as exc:
        kind = "numeric" if isinstance(exc, NumericError) else "config"
        print(f"{kind} error: {exc}", file=sys.stderr)
        return 3 if isinstance(exc, NumericError) else 1
    except RvhashError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
