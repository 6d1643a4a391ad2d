"""Command line front end: synth, train, eval, gradcheck.

Every command is deterministic given its flags and seed; rerunning writes
byte-identical checkpoints and reports apart from the timing block.
Config files are flat ``key=value`` lines whose entries act as defaults
that explicit command-line flags override.

Exit codes: 0 success, 2 configuration, 3 data, 4 numerical.
"""

import argparse
import datetime as _dt
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .baselines import GeoSvr, LinearSvm, LinearSvr
from .captioning import LstmCaptioner
from .cca import LinearCca
from .checkpoint import load_checkpoint
from .corpus import SynthSpec, load_corpus, save_corpus, split_corpus, synth_corpus, synth_vocab
from .errors import ConfigError, DataError, NewsnetError
from .gradcheck import SEEDS, THRESHOLD, run_suite
from .losses import EARTH_RADIUS_KM
from .metrics import accuracy_report, bleu, geo_report, l1_report, retrieval_eval
from .models import TASKS, MultitaskTextCnn, TextCnn
from .text import (build_vocab, bow_matrix, load_embeddings, random_embeddings,
                   save_embeddings, truncate_vocab)

SCHEMA = "newsnet-report/1"
OUT_ENV = "NEWSNET_OUT"

TASK_ALIASES = {"src": "source", "pop": "popularity", "geo": "geolocation",
                "illus": "illustration"}


def _canon_task(name):
    name = TASK_ALIASES.get(name, name)
    if name not in TASKS:
        raise ConfigError(f"unknown task {name!r}; expected one of {TASKS}")
    return name


def _out_dir(args):
    root = args.out or os.environ.get(OUT_ENV) or "."
    path = Path(root)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_report(path, report):
    report["timing"]["written_at"] = _dt.datetime.now(_dt.timezone.utc).isoformat()
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")


def _load_config_lines(path):
    pseudo = []
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for ln, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{ln}: expected key=value, got {line!r}")
        flag = "--" + key.strip().replace("_", "-")
        value = value.strip()
        if value.lower() == "true":
            pseudo.append(flag)
        else:
            pseudo.extend([flag, value])
    return pseudo


def _merge_config(argv):
    """Insert config-file entries right after the subcommand so explicit
    command-line flags, parsed later, win."""
    if not argv or "--config" not in argv:
        return argv
    i = argv.index("--config")
    if i + 1 >= len(argv):
        raise ConfigError("--config needs a file path")
    pseudo = _load_config_lines(argv[i + 1])
    rest = argv[1:i] + argv[i + 2 :]
    return [argv[0], *pseudo, *rest]


def _parse_geo_centers(text):
    centers = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        pieces = part.split(",")
        if len(pieces) != 2:
            raise ConfigError(f"geo center {part!r} must be lat,lon in radians")
        centers.append((float(pieces[0]), float(pieces[1])))
    if not centers:
        raise ConfigError("no geo centers parsed")
    return centers


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args):
    out = _out_dir(args)
    centers = _parse_geo_centers(args.geo_centers) if args.geo_centers else None
    spec = SynthSpec(
        num_sources=args.sources,
        articles_per_source=args.per_source,
        vocab_size=args.vocab_size,
        tokens_per_article=(args.tokens_min, args.tokens_max),
        geo_centers=centers,
        geo_spread=args.geo_spread,
        popularity_sigma=args.popularity_sigma,
        image_noise=args.image_noise,
        d_img=args.d_img,
        source_token_bias=args.token_bias,
        captions_per_article=args.captions_per_article,
        caption_len=(args.caption_min, args.caption_max),
        seed=args.seed,
    )
    records = synth_corpus(spec)
    corpus_path = out / args.corpus_name
    save_corpus(records, corpus_path)
    lines = [f"wrote {len(records)} records to {corpus_path}"]
    if args.embed_dim > 0:
        table = random_embeddings(synth_vocab(spec), args.embed_dim, seed=args.seed,
                                  scale=args.embed_scale)
        embed_path = out / args.embed_name
        save_embeddings(table, embed_path)
        lines.append(f"wrote {len(table.vectors)} embeddings ({args.embed_dim}-d) to {embed_path}")
    print("\n".join(lines))
    return 0


# ---------------------------------------------------------------------------
# shared evaluation plumbing


def _require_images(records, where):
    for r in records:
        if r.image_feature is None:
            raise DataError(f"record {r.id!r} in the {where} set has no image feature")


def _image_matrix(records):
    return np.stack([r.image_feature for r in records])


def _task_metrics(task, predict, decide, records, train_records, radius, weighted):
    """One metric block for one head on one record list."""
    if not records:
        raise DataError("empty evaluation split")
    if task == "source":
        preds = predict(records)
        overall, balanced = accuracy_report(preds, [r.source for r in records])
        return {"accuracy": overall, "balanced_accuracy": balanced}
    if task == "popularity":
        preds = predict(records)
        mean, med = l1_report(preds, [float(r.popularity) for r in records])
        return {"mean_l1": mean, "median_l1": med}
    if task == "geolocation":
        preds = predict(records)
        mean, med = geo_report(preds, records, radius=radius)
        return {"mean_gcd_km": mean, "median_gcd_km": med}
    # illustration: rank the aligned image pool in post-hoc CCA space
    _require_images(train_records, "train")
    _require_images(records, "eval")
    cca = LinearCca().fit(decide(train_records), _image_matrix(train_records))
    text_proj = cca.transform(decide(records), view="text")
    image_proj = cca.transform(_image_matrix(records), view="image")
    res = retrieval_eval(text_proj, image_proj, cca.correlations_, weighted=weighted)
    return {"R@1": res.r_at_1, "R@10": res.r_at_10, "MR": res.median_rank,
            "pool": res.pool}


def _cnn_metrics(model, tasks, splits, radius, weighted):
    blocks = {}
    multi = isinstance(model, MultitaskTextCnn)
    for task in tasks:
        if multi:
            predict = lambda recs, t=task: model.predict(recs, t)
            decide = lambda recs, t=task: model.decision_values(recs, t)
        else:
            predict = model.predict
            decide = model.decision_values
        blocks[task] = {
            name: _task_metrics(task, predict, decide, recs, splits["train"],
                                radius, weighted)
            for name, recs in splits.items()
        }
    return blocks


def _split_records(records, args):
    split = split_corpus(records, ratios=(1.0 - args.val_frac - args.test_frac,
                                          args.val_frac, args.test_frac),
                         seed=args.split_seed)
    return {name: split.select(records, name) for name in ("train", "val", "test")}


# ---------------------------------------------------------------------------
# train


def _bow_features(records, vocab):
    return bow_matrix(records, vocab)


def _build_bow_vocab(train_records, args):
    vocab = build_vocab(train_records, min_count=args.min_count)
    if args.vocab_size is not None and args.vocab_size < vocab.size:
        vocab = truncate_vocab(vocab, args.vocab_size, keep=args.vocab_keep)
    return vocab


def _vocab_meta(vocab):
    return {
        "vocab_tokens": list(vocab.tokens),
        "vocab_doc_freq": [int(c) for c in vocab.doc_freq],
        "vocab_num_train_docs": vocab.num_train_docs,
        "vocab_min_count": vocab.min_count,
    }


def _vocab_from_meta(meta):
    from .text import Vocabulary

    tokens = tuple(meta["vocab_tokens"])
    return Vocabulary(
        tokens=tokens,
        index={t: i for i, t in enumerate(tokens)},
        doc_freq=np.asarray(meta["vocab_doc_freq"], dtype=np.int64),
        num_train_docs=meta["vocab_num_train_docs"],
        min_count=meta["vocab_min_count"],
    )


def _train_cnn(args, splits, embeddings):
    common = dict(
        embeddings=embeddings, n_cols=args.n_cols, iterations=args.iterations,
        seed=args.seed, base_lr=args.base_lr, drop_factor=args.drop_factor,
        drop_every=args.drop_every, momentum=args.momentum,
        weight_decay=args.weight_decay, batch_size=args.batch_size,
        dropout_ratio=args.dropout, reg_eps=args.reg_eps, geo_loss=args.geo_loss,
    )
    if args.tasks:
        tasks = tuple(_canon_task(t) for t in args.tasks.split(","))
        model = MultitaskTextCnn(tasks=tasks, head_lr_factor=(
            args.head_lr_factor if args.head_lr_factor is not None else 0.1
        ), **common)
        model.fit(splits["train"])
        return model, list(tasks)
    task = _canon_task(args.task)
    if args.transfer_from:
        source = TextCnn.load(args.transfer_from, embeddings=embeddings)
        train = splits["train"]
        num_classes = max((r.source for r in train), default=0) + 1
        label_dim = next((r.image_feature.shape[0] for r in train
                          if r.image_feature is not None), None)
        model = source.transfer(task, args.seed, num_classes=num_classes,
                                label_dim=label_dim, force=args.force_transfer)
        overrides = dict(common)
        overrides.pop("n_cols")  # keep the padded width the trunk was trained at
        model.set_params(**overrides)
        if args.head_lr_factor is not None:
            model.set_params(head_lr_factor=args.head_lr_factor)
        model.fit(train)
        return model, [task]
    model = TextCnn(task=task, head_lr_factor=(
        args.head_lr_factor if args.head_lr_factor is not None else 1.0
    ), **common)
    model.fit(splits["train"])
    return model, [task]


def cmd_train(args):
    out = _out_dir(args)
    records = load_corpus(args.corpus)
    splits = _split_records(records, args)
    report = {
        "schema": SCHEMA,
        "command": "train",
        "model": args.model,
        "corpus": str(args.corpus),
        "split_seed": args.split_seed,
        "split_sizes": {k: len(v) for k, v in splits.items()},
        "seed": args.seed,
    }
    started = time.perf_counter()

    if args.model == "cnn":
        if not args.task and not args.tasks:
            raise ConfigError("cnn training needs --task or --tasks")
        if args.embed is None:
            raise ConfigError("cnn training needs --embed EMBEDDINGS_FILE")
        embeddings = load_embeddings(args.embed)
        model, tasks = _train_cnn(args, splits, embeddings)
        ckpt = out / "model.ckpt"
        model.save(ckpt, extra_meta={"split_seed": args.split_seed})
        report["tasks"] = tasks
        report["train"] = model.report_
        report["metrics"] = _cnn_metrics(
            model, tasks,
            {"train": splits["train"], "val": splits["val"]},
            args.earth_radius, not args.unweighted_retrieval,
        )
    elif args.model in ("svm", "svr"):
        task = _canon_task(args.task or ("source" if args.model == "svm" else "popularity"))
        vocab = _build_bow_vocab(splits["train"], args)
        x_train = _bow_features(splits["train"], vocab)
        ckpt = out / "model.ckpt"
        meta = {"split_seed": args.split_seed, "task": task, **_vocab_meta(vocab)}
        if args.model == "svm":
            if task != "source":
                raise ConfigError("the SVM baseline handles the source task only")
            model = LinearSvm(lam=args.lam, epochs=args.epochs, seed=args.seed)
            model.fit(x_train, np.array([r.source for r in splits["train"]]))
            predict = lambda recs: model.predict(_bow_features(recs, vocab))
        elif task == "popularity":
            model = LinearSvr(eps=args.svr_eps, lam=args.lam, epochs=args.epochs,
                              seed=args.seed)
            model.fit(x_train, np.array([float(r.popularity) for r in splits["train"]]))
            predict = lambda recs: model.predict(_bow_features(recs, vocab))
        elif task == "geolocation":
            labeled = [r for r in splits["train"] if r.geo]
            if not labeled:
                raise DataError("no geolocated records in the train split")
            model = GeoSvr(eps=args.svr_eps, lam=args.lam, epochs=args.epochs,
                           seed=args.seed)
            model.fit(_bow_features(labeled, vocab),
                      np.array([r.geo[0] for r in labeled]))
            predict = lambda recs: model.predict(_bow_features(recs, vocab))
        else:
            raise ConfigError(f"the SVR baseline cannot handle task {task!r}")
        model.save(ckpt, extra_meta=meta)
        report["tasks"] = [task]
        report["metrics"] = {task: {
            name: _task_metrics(task, predict, None, recs, splits["train"],
                                args.earth_radius, not args.unweighted_retrieval)
            for name, recs in (("train", splits["train"]), ("val", splits["val"]))
        }}
    elif args.model == "captioner":
        embeddings = None
        if args.caption_mode in ("text", "both"):
            if args.embed is None:
                raise ConfigError(f"caption mode {args.caption_mode!r} needs --embed")
            embeddings = load_embeddings(args.embed)
        model = LstmCaptioner(
            mode=args.caption_mode, embeddings=embeddings,
            hidden_size=args.hidden_size, vocab_min_count=args.caption_vocab_min,
            iterations=args.iterations, base_lr=args.caption_lr,
            batch_size=args.caption_batch, max_len=args.max_len, seed=args.seed,
        )
        model.fit(splits["train"])
        ckpt = out / "model.ckpt"
        model.save(ckpt)
        report["tasks"] = ["caption"]
        report["train"] = model.report_
        report["metrics"] = {"caption": {
            "val": _caption_metrics(model, splits["val"])
        }}
    else:
        raise ConfigError(f"unknown model kind {args.model!r}")

    report["checkpoint"] = str(ckpt)
    report["timing"] = {"seconds": time.perf_counter() - started}
    report_path = out / "train_report.json"
    _write_report(report_path, report)
    print(f"checkpoint: {ckpt}\nreport: {report_path}")
    return 0


def _caption_metrics(model, records, strategy="greedy", beam_width=3):
    for r in records:
        if not r.captions:
            raise DataError(f"record {r.id!r} has no caption to evaluate against")
    candidates = []
    for r in records:
        tokens, _ = model.generate(r, strategy=strategy, beam_width=beam_width)
        candidates.append(tokens)
    references = [list(r.captions[0]) for r in records]
    scores = bleu(candidates, references)
    return {f"BLEU-{i + 1}": s for i, s in enumerate(scores)}


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args):
    out = _out_dir(args)
    records = load_corpus(args.corpus)
    splits = _split_records(records, args)
    if args.split not in splits:
        raise ConfigError(f"unknown split {args.split!r}")
    eval_records = splits[args.split]
    _, meta = load_checkpoint(args.ckpt)
    kind = meta.get("model_kind")
    report = {
        "schema": SCHEMA,
        "command": "eval",
        "checkpoint": str(args.ckpt),
        "model_kind": kind,
        "corpus": str(args.corpus),
        "split": args.split,
        "split_seed": args.split_seed,
        "n_records": len(eval_records),
    }
    started = time.perf_counter()

    if kind in ("TextCnn", "MultitaskTextCnn"):
        if args.embed is None:
            raise ConfigError("evaluating a text CNN needs --embed EMBEDDINGS_FILE")
        embeddings = load_embeddings(args.embed)
        cls = TextCnn if kind == "TextCnn" else MultitaskTextCnn
        model = cls.load(args.ckpt, embeddings=embeddings)
        tasks = meta["tasks"]
        if args.task and _canon_task(args.task) not in tasks:
            raise ConfigError(
                f"checkpoint heads {tasks} do not include task {args.task!r}"
            )
        wanted = [_canon_task(args.task)] if args.task else tasks
        report["tasks"] = wanted
        report["metrics"] = _cnn_metrics(
            model, wanted, {"train": splits["train"], args.split: eval_records},
            args.earth_radius, not args.unweighted_retrieval,
        )
    elif kind in ("LinearSvm", "LinearSvr", "GeoSvr"):
        vocab = _vocab_from_meta(meta)
        task = meta["task"]
        if args.task and _canon_task(args.task) != task:
            raise ConfigError(f"checkpoint task {task!r} does not match --task")
        model = {"LinearSvm": LinearSvm, "LinearSvr": LinearSvr,
                 "GeoSvr": GeoSvr}[kind].load(args.ckpt)
        predict = lambda recs: model.predict(bow_matrix(recs, vocab))
        report["tasks"] = [task]
        report["metrics"] = {task: {args.split: _task_metrics(
            task, predict, None, eval_records, splits["train"],
            args.earth_radius, not args.unweighted_retrieval,
        )}}
    elif kind == "LstmCaptioner":
        embeddings = None
        if meta["mode"] in ("text", "both"):
            if args.embed is None:
                raise ConfigError("evaluating a text-context captioner needs --embed")
            embeddings = load_embeddings(args.embed)
        model = LstmCaptioner.load(args.ckpt, embeddings=embeddings)
        report["tasks"] = ["caption"]
        report["metrics"] = {"caption": {args.split: _caption_metrics(
            model, eval_records, strategy=args.strategy, beam_width=args.beam_width,
        )}}
        captions_path = out / "captions.jsonl"
        with open(captions_path, "w", encoding="utf-8") as fh:
            for rec in eval_records:
                tokens, lp = model.generate(rec, strategy=args.strategy,
                                            beam_width=args.beam_width)
                fh.write(json.dumps({"id": rec.id, "tokens": tokens,
                                     "log_prob": lp}) + "\n")
        report["captions"] = str(captions_path)
    else:
        raise DataError(f"checkpoint kind {kind!r} is not evaluable")

    report["timing"] = {"seconds": time.perf_counter() - started}
    report_path = out / "eval_report.json"
    _write_report(report_path, report)
    print(f"report: {report_path}")
    return 0


# ---------------------------------------------------------------------------
# gradcheck


def cmd_gradcheck(args):
    out = _out_dir(args)
    rows = run_suite(only=args.only, seeds=args.seeds)
    width = max(len(r["component"]) for r in rows)
    for r in rows:
        state = "pass" if r["passed"] else "FAIL"
        print(f"{r['component']:<{width}}  {r['max_error']:.3e}  {state}")
    report = {
        "schema": SCHEMA,
        "command": "gradcheck",
        "threshold": THRESHOLD,
        "seeds": args.seeds,
        "rows": rows,
        "timing": {},
    }
    _write_report(out / "gradcheck_report.json", report)
    if not all(r["passed"] for r in rows):
        failed = ", ".join(r["component"] for r in rows if not r["passed"])
        print(f"gradient check failed: {failed}", file=sys.stderr)
        return 4
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_common(p):
    p.add_argument("--config", help="key=value config file; flags override it")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or .)")
    p.add_argument("--seed", type=int, default=0)


def _add_split(p):
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--val-frac", type=float, default=0.2)
    p.add_argument("--test-frac", type=float, default=0.2)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="newsnet",
        description="Multi-task text CNN, CCA retrieval and captioning toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    _add_common(p)
    p.add_argument("--sources", type=int, default=3)
    p.add_argument("--per-source", type=int, default=50)
    p.add_argument("--vocab-size", type=int, default=120)
    p.add_argument("--tokens-min", type=int, default=20)
    p.add_argument("--tokens-max", type=int, default=40)
    p.add_argument("--d-img", type=int, default=24)
    p.add_argument("--geo-spread", type=float, default=0.02)
    p.add_argument("--image-noise", type=float, default=0.05)
    p.add_argument("--popularity-sigma", type=float, default=1.0)
    p.add_argument("--token-bias", type=float, default=0.85)
    p.add_argument("--captions-per-article", type=int, default=1)
    p.add_argument("--caption-min", type=int, default=3)
    p.add_argument("--caption-max", type=int, default=6)
    p.add_argument("--geo-centers", help="semicolon-separated lat,lon pairs in radians")
    p.add_argument("--embed-dim", type=int, default=16,
                   help="also write a random embedding table (0 to skip)")
    p.add_argument("--embed-scale", type=float, default=1.0,
                   help="embedding entry standard deviation")
    p.add_argument("--corpus-name", default="corpus.jsonl")
    p.add_argument("--embed-name", default="embeddings.txt")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model and write checkpoint + report")
    _add_common(p)
    _add_split(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", choices=("cnn", "svm", "svr", "captioner"), default="cnn")
    p.add_argument("--task", help="single task (source, popularity, geolocation, illustration)")
    p.add_argument("--tasks", help="comma-separated task list for multitask training")
    p.add_argument("--transfer-from", help="checkpoint whose trunk seeds this run")
    p.add_argument("--force-transfer", action="store_true")
    p.add_argument("--embed", help="embedding table file")
    p.add_argument("--n-cols", type=int, help="padded article width (default: longest)")
    p.add_argument("--iterations", type=int, default=200)
    p.add_argument("--base-lr", type=float, default=0.05)
    p.add_argument("--drop-factor", type=float, default=0.1)
    p.add_argument("--drop-every", type=int, default=1000)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=0.0005)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--head-lr-factor", type=float, default=None)
    p.add_argument("--reg-eps", type=float, default=1e-4)
    p.add_argument("--geo-loss", choices=("gcd", "euclidean"), default="gcd")
    p.add_argument("--earth-radius", type=float, default=EARTH_RADIUS_KM)
    p.add_argument("--unweighted-retrieval", action="store_true")
    p.add_argument("--min-count", type=int, default=2, help="BoW vocabulary threshold")
    p.add_argument("--vocab-size", type=int, help="BoW vocabulary truncation")
    p.add_argument("--vocab-keep", choices=("common", "rare"), default="common")
    p.add_argument("--lam", type=float, default=1e-4, help="baseline regularization")
    p.add_argument("--epochs", type=int, default=20, help="baseline training epochs")
    p.add_argument("--svr-eps", type=float, default=0.1, help="SVR tube half-width")
    p.add_argument("--caption-mode", choices=("text", "image", "both"), default="text")
    p.add_argument("--caption-vocab-min", type=int, default=2)
    p.add_argument("--caption-lr", type=float, default=0.0002)
    p.add_argument("--caption-batch", type=int, default=4)
    p.add_argument("--hidden-size", type=int, default=256)
    p.add_argument("--max-len", type=int, default=40)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a corpus split")
    _add_common(p)
    _add_split(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--task", help="restrict a multitask checkpoint to one head")
    p.add_argument("--embed", help="embedding table file")
    p.add_argument("--earth-radius", type=float, default=EARTH_RADIUS_KM)
    p.add_argument("--unweighted-retrieval", action="store_true")
    p.add_argument("--strategy", choices=("greedy", "beam"), default="greedy")
    p.add_argument("--beam-width", type=int, default=3)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    _add_common(p)
    p.add_argument("--only", help="comma-separated component subset")
    p.add_argument("--seeds", type=int, default=SEEDS)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None):
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    try:
        argv = _merge_config(argv)
        args = parser.parse_args(argv)
        return args.func(args)
    except NewsnetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
