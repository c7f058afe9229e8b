"""Command-line entry point: synth-pool, mix, train, run, eval."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import acoustic, benchmark
from .acoustic import DivergenceError, OracleModels, OracleParams, ToyRecipe, frame_truth
from .core import DEFAULT_VOCAB, FormatError, Segment, make_rng, write_annotation
from .detection import HeadTrainConfig, OverlapHead, head_accuracy, train_overlap_head
from .evaluation import TableRow, emit_report, region_wer
from .mixer import (overlap_stats, read_bundle, read_overlap_tsv, read_pool, sample_corpus, synth_pool,
                    write_bundle, write_pool)
from .orchestrator import (SC_ONLY, SI_ONLY, SI_SC, CostModel, OrchestratorConfig, Pipeline,
                           SIOnlyModels, fit_oracle_head, merge_transcripts, oracle_head_features,
                           process_stream)
from .speakers import METHODS, SpeakerStore, TruthEmbeddingSource
from .windowing import WindowingConfig

log = logging.getLogger("ovlasr")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC = 0, 2, 3


class ValidationError(Exception):
    pass


# ---------------------------------------------------------------- manifest

MANIFEST_KEYS = {
    "windowing": {"window_s", "edge_s", "operation_s", "frame_rate"},
    "n_recent": None,
    "embed_method": None,
    "system": None,
    "thresholds": {"overlap", "change", "accept"},
    "cost": {"feature_share"},
    "oracle": {"clean_confidence", "overlap_confusion", "noise_std", "sc_match_threshold",
               "change_noise_std"},
    "decoder": {"beam_width", "label_prune", "pause_s"},
    "single_from_sc": None,
    "embed_jitter": None,
    "enroll": None,
    "seed": None,
}


@dataclass
class RunConfig:
    orchestrator: OrchestratorConfig = field(default_factory=OrchestratorConfig)
    oracle: OracleParams = field(default_factory=OracleParams)
    embed_jitter: float = 0.0
    enroll: bool = True
    seed: int = 0


def parse_manifest(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ValidationError("manifest must be a JSON object")
    for k, v in data.items():
        if k not in MANIFEST_KEYS:
            raise ValidationError(f"unknown manifest key {k!r}")
        sub = MANIFEST_KEYS[k]
        if sub is not None:
            if not isinstance(v, dict):
                raise ValidationError(f"manifest key {k!r} must be an object")
            extra = set(v) - sub
            if extra:
                raise ValidationError(f"unknown keys under {k!r}: {sorted(extra)}")
    try:
        th = data.get("thresholds", {})
        dec = data.get("decoder", {})
        oc = OrchestratorConfig(
            n_recent=int(data.get("n_recent", 2)),
            embed_method=data.get("embed_method", "LAST"),
            system=data.get("system", SI_SC),
            windowing=WindowingConfig(**data.get("windowing", {})),
            cost=CostModel(**data.get("cost", {})),
            overlap_threshold=float(th.get("overlap", 0.5)),
            change_threshold=float(th.get("change", 0.5)),
            accept_threshold=float(th.get("accept", 0.6)),
            beam_width=int(dec.get("beam_width", 8)),
            label_prune=float(dec.get("label_prune", 3.0)),
            pause_s=float(dec.get("pause_s", 0.8)),
            single_from_sc=bool(data.get("single_from_sc", True)),
        )
        return RunConfig(oc, OracleParams(**data.get("oracle", {})), float(data.get("embed_jitter", 0.0)),
                         bool(data.get("enroll", True)), int(data.get("seed", 0)))
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"invalid manifest: {exc}") from exc


def load_run_config(args) -> RunConfig:
    data = {}
    if getattr(args, "manifest", None):
        try:
            data = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read manifest: {exc}") from exc
    rc = parse_manifest(data)
    if getattr(args, "seed", None) is not None:
        rc.seed = args.seed
    return rc


def parse_int_list(text: str) -> list[int]:
    try:
        out = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not out or min(out) < 1:
        raise argparse.ArgumentTypeError("values must be positive integers")
    return out


def parse_methods(text: str) -> list[str]:
    if text.lower() == "all":
        return list(METHODS)
    out = [m.strip().upper() for m in text.split(",") if m.strip()]
    bad = [m for m in out if m not in METHODS]
    if bad or not out:
        raise argparse.ArgumentTypeError(f"methods must be 'all' or a subset of {','.join(METHODS)}")
    return out


# ---------------------------------------------------------------- helpers

def bundle_dirs(path: Path) -> list[Path]:
    """A single bundle, or every bundle directly below a corpus directory."""
    if not path.is_dir():
        raise ValidationError(f"{path}: not a directory")
    if list(path.glob("spk_*.tsv")):
        return [path]
    subs = sorted(p for p in path.iterdir() if p.is_dir() and list(p.glob("spk_*.tsv")))
    return subs


def save_head(head: OverlapHead, path) -> None:
    acoustic.save_tensors({"weights": head.weights, "bias": np.array([head.bias])}, path)


def load_head(path) -> OverlapHead:
    t = acoustic.load_tensors(path)
    if set(t) != {"weights", "bias"}:
        raise ValidationError(f"{path}: not an overlap-head checkpoint")
    return OverlapHead(t["weights"], float(t["bias"][0]))


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------- synth-pool

def cmd_synth_pool(args) -> int:
    lo, hi = args.min_len, args.max_len
    if not 1.0 <= lo <= hi <= 45.0:
        raise ValidationError("utterance lengths must satisfy 1 <= min-len <= max-len <= 45")
    if args.speakers < 2:
        raise ValidationError("a pool needs at least two speakers")
    pool = synth_pool(args.speakers, args.utts, make_rng(args.seed, "pool"), DEFAULT_VOCAB,
                      len_range=(lo, hi), audio=args.audio)
    write_pool(pool, args.out)
    print(f"wrote {len(pool)} utterances from {args.speakers} speakers to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------- mix

def write_stats_csv(stats, path: Path) -> None:
    rows = [["total_s", f"{stats.total_s:.3f}"], ["overlap_s", f"{stats.overlap_s:.3f}"],
            ["overlap_fraction", f"{stats.overlap_s / stats.total_s if stats.total_s else 0.0:.6f}"],
            ["overlap_instances", str(len(stats.instances))]]
    rows += [[f"speakers_{n}_s", f"{d:.3f}"] for n, d in sorted(stats.by_cardinality.items())]
    for lo, hi, c, d in stats.histogram:
        rows += [[f"hist_{lo:.2f}_{hi:.2f}_count", str(c)], [f"hist_{lo:.2f}_{hi:.2f}_duration_s", f"{d:.3f}"]]
    write_csv(path, ["key", "value"], rows)


def cmd_mix(args) -> int:
    pool_dir = Path(args.pool)
    try:
        pool = read_pool(pool_dir, DEFAULT_VOCAB)
    except (FileNotFoundError, FormatError) as exc:
        raise ValidationError(f"bad pool: {exc}") from exc
    if len({s for p in pool for s in p.speakers}) < 2:
        raise ValidationError("pool must contain at least two speakers")
    if args.count < 0:
        raise ValidationError("--count must be non-negative")
    mixes = sample_corpus(pool, args.count, make_rng(args.seed, "mix"), args.interruption_ratio,
                          max_overlap_s=args.max_overlap_s)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for j, m in enumerate(mixes):
        write_bundle(m.stream, out / f"mix{j:05d}", m.overlap)
    # every known speaker, so evaluation can enroll extra (distractor) speakers
    (out / "speakers.tsv").write_bytes((pool_dir / "embeddings.tsv").read_bytes())
    stats = overlap_stats([m.stream for m in mixes])
    write_stats_csv(stats, out / "stats.csv")
    frac = stats.overlap_s / stats.total_s if stats.total_s else 0.0
    print(f"wrote {len(mixes)} mixtures to {out}; overlap fraction {frac:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------- train

def cmd_train(args) -> int:
    rc = load_run_config(args)
    corpus = Path(args.corpus)
    if not corpus.is_dir():
        raise ValidationError(f"{corpus}: corpus directory not found")
    bundles = bundle_dirs(corpus)
    if not bundles:
        raise ValidationError(f"{corpus}: no mixture bundles")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    truths = [frame_truth(read_bundle(b, DEFAULT_VOCAB), DEFAULT_VOCAB) for b in bundles]
    X, y = oracle_head_features(truths, rc.oracle, DEFAULT_VOCAB, rc.seed)
    head = OverlapHead.zeros(X.shape[1])
    hist: list[float] = []
    if args.epochs > 0:
        if len(np.unique(y)) < 2:
            raise ValidationError("corpus contains no overlap (or only overlap); cannot train the head")
        head, hist = train_overlap_head(X, y, head, HeadTrainConfig(epochs=args.epochs),
                                        make_rng(rc.seed, "head-train"))
        if not all(np.isfinite(hist)):
            raise DivergenceError("overlap head loss is not finite", rc.seed)
    save_head(head, out / "overlap_head.ckpt")
    write_csv(out / "overlap_head_loss.csv", ["epoch", "loss"], [[i, f"{v:.8f}"] for i, v in enumerate(hist)])
    acc = head_accuracy(head, X, y)
    print(f"overlap head: {head.n_params} parameters, frame accuracy {acc:.4f}")

    recipe = ToyRecipe(n_train=args.toy_examples)
    sc_epochs = args.sc_epochs if args.sc_epochs is not None else (0 if args.epochs == 0 else recipe.train.epochs)
    recipe.train = replace(recipe.train, epochs=sc_epochs)
    res, scores = acoustic.run_toy_recipe(recipe, rc.seed)
    if not all(np.isfinite(res.losses)):
        raise DivergenceError("SC training loss is not finite", rc.seed)
    acoustic.save_model(res.model, out / "sc_toy.ckpt")
    write_csv(out / "sc_toy_loss.csv", ["epoch", "loss", "nonspeaker_divisor"],
              [[i, f"{l:.8f}", f"{k:.6f}"] for i, (l, k) in enumerate(zip(res.losses, res.divisors))])
    print(f"toy SC model: token accuracy {scores.token_accuracy:.4f}, "
          f"absent-speaker empty rate {scores.empty_rate:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------- run

def resolve_head(args, rc: RunConfig, params: OracleParams) -> OverlapHead | None:
    if rc.orchestrator.force_single:
        return None
    if args.head:
        return load_head(args.head)
    if args.oracle:
        return fit_oracle_head(params, DEFAULT_VOCAB, seed=rc.seed)[0]
    raise ValidationError("either --head CHECKPOINT or --oracle is required")


def run_config(args) -> tuple[RunConfig, OracleParams]:
    rc = load_run_config(args)
    params = rc.oracle
    if args.noiseless:
        params = replace(params, noise_std=0.0, change_noise_std=0.0)
    if args.force_single:
        rc.orchestrator.force_single = True
    if args.n is not None:
        rc.orchestrator.n_recent = args.n
    if args.system is not None:
        rc.orchestrator.system = args.system
    rc.orchestrator.__post_init__()
    return rc, params


def make_pipeline(stream, rc: RunConfig, params: OracleParams, head, seed: int):
    truth = frame_truth(stream, DEFAULT_VOCAB, rc.orchestrator.windowing.frame_rate)
    models = OracleModels(truth, params, DEFAULT_VOCAB, seed=seed)
    if rc.orchestrator.force_single:
        models = SIOnlyModels(models)
    source = TruthEmbeddingSource(stream.segments, stream.embeddings, rc.embed_jitter, seed)
    store = SpeakerStore(rc.orchestrator.accept_threshold)
    if rc.enroll:
        for spk in stream.speakers:
            if spk in stream.embeddings:
                store.enroll(stream.embeddings[spk], 0.0, spk)
    return truth, models, source, store


def write_run_outputs(res, out: Path, n_recent: int) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for old in out.glob("hyp_*.tsv"):
        old.unlink()
    for t in res.transcripts:
        # one word per line keeps exact word times for region scoring
        segs = [Segment(w.start_s, w.end_s, t.speaker, (w.text,)) for w in t.words]
        write_annotation(segs, out / f"hyp_{t.speaker}.tsv")
    (out / "transcript.txt").write_text("".join(l + "\n" for l in merge_transcripts(res.transcripts)),
                                        encoding="utf-8")
    (out / "sentences.tsv").write_text("".join(s.record() + "\n" for s in res.sentences), encoding="utf-8")
    (out / "mode.tsv").write_text("".join(f"{r.start_s:.3f}\t{r.end_s:.3f}\t{r.label}\t{r.speaker or '-'}\n"
                                          for r in res.timeline), encoding="utf-8")
    multi = sum(w.mode == "MULTI" for w in res.windows)
    lines = [f"hw\t{res.hw:.6f}", f"n_recent\t{n_recent}", f"windows\t{len(res.windows)}",
             f"multi_windows\t{multi}"]
    lines += [f"window\t{w.index}\t{w.mode}\t{w.k}\t{w.cost:.6f}" for w in res.windows]
    (out / "cost.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_run(args) -> int:
    rc, params = run_config(args)
    bundles = bundle_dirs(Path(args.bundle))
    if not bundles:
        raise ValidationError(f"{args.bundle}: no mixture bundles")
    head = resolve_head(args, rc, params)
    if args.serve:
        if len(bundles) != 1:
            raise ValidationError("--serve binds to exactly one bundle")
        return serve_bundle(args, bundles[0], rc, params, head)
    out = Path(args.out)
    for j, b in enumerate(bundles):
        stream = read_bundle(b, DEFAULT_VOCAB)
        truth, models, source, store = make_pipeline(stream, rc, params, head, rc.seed + j)
        res = process_stream(truth.frames, rc.orchestrator, models, source, store, head, DEFAULT_VOCAB)
        dest = out if len(bundles) == 1 and b == Path(args.bundle) else out / b.name
        write_run_outputs(res, dest, rc.orchestrator.n_recent)
        overlap = read_overlap_tsv(b / "overlap.tsv") if (b / "overlap.tsv").exists() else []
        score = region_wer({s: stream.speaker_segments(s) for s in stream.speakers}, res.transcripts,
                           overlap, DEFAULT_VOCAB)
        print(f"{b.name}: WER {score.overall_rate:.2f}% (single {score.single_rate:.2f}%, "
              f"overlap {score.overlap_rate:.2f}%), HW {res.hw:.2f}")
    return EXIT_OK


def serve_bundle(args, bundle: Path, rc: RunConfig, params, head) -> int:
    from .server import StreamSession, serve

    stream = read_bundle(bundle, DEFAULT_VOCAB)

    def make_session():
        truth, models, source, store = make_pipeline(stream, rc, params, head, rc.seed)
        return StreamSession(Pipeline(rc.orchestrator, models, source, store, head, DEFAULT_VOCAB),
                             truth.frames)

    def ready(addr):
        print(f"listening on {addr[0]}:{addr[1]}", flush=True)

    serve(args.host, args.port, make_session, args.connections, ready)
    return EXIT_OK


# ---------------------------------------------------------------- eval

def read_hyp_dir(path: Path) -> dict:
    from .orchestrator import HypWord
    from .core import read_annotation

    out = {}
    for p in sorted(path.glob("hyp_*.tsv")):
        spk = p.stem[len("hyp_"):]
        words = []
        for seg in read_annotation(p):
            # multi-word lines carry no word times; spread their words evenly
            n = len(seg.words)
            step = (seg.end_s - seg.start_s) / max(1, n)
            words += [HypWord(w, seg.start_s + k * step, seg.start_s + (k + 1) * step)
                      for k, w in enumerate(seg.words)]
        out[spk] = words
    return out


def cmd_eval(args) -> int:
    rc = load_run_config(args)
    corpus = Path(args.corpus)
    if not corpus.is_dir():
        raise ValidationError(f"{corpus}: reference corpus not found")
    bundles = bundle_dirs(corpus)
    if not bundles:
        raise ValidationError(f"{corpus}: no reference bundles")
    streams = {b.name: read_bundle(b, DEFAULT_VOCAB) for b in bundles}
    overlaps = {b.name: read_overlap_tsv(b / "overlap.tsv") if (b / "overlap.tsv").exists() else []
                for b in bundles}
    stats = overlap_stats(list(streams.values()))

    if args.hyp:
        hyp_root = Path(args.hyp)
        hyp_dirs = {p.name: p for p in hyp_root.iterdir() if p.is_dir()} if hyp_root.is_dir() else {}
        if len(bundles) == 1 and not hyp_dirs and hyp_root.is_dir():
            hyp_dirs = {bundles[0].name: hyp_root}
        if set(hyp_dirs) != set(streams):
            missing = sorted(set(streams) - set(hyp_dirs))
            extra = sorted(set(hyp_dirs) - set(streams))
            raise ValidationError(f"stream ids differ between references and hypotheses "
                                  f"(missing {missing}, unexpected {extra})")
        from .evaluation import WerBreakdown
        total = WerBreakdown()
        for name, st in streams.items():
            refs = {s: st.speaker_segments(s) for s in st.speakers}
            total.merge(region_wer(refs, read_hyp_dir(hyp_dirs[name]), overlaps[name], DEFAULT_VOCAB))
        hw, ns = [], set()
        for d in hyp_dirs.values():
            cost = d / "cost.txt"
            if cost.exists():
                kv = dict(l.split("\t", 1) for l in cost.read_text().splitlines() if not l.startswith("window\t"))
                hw.append(float(kv["hw"]))
                ns.add(int(kv.get("n_recent", 1)))
        n = ns.pop() if len(ns) == 1 else 0
        rows = [TableRow(args.label, n, float(np.mean(hw)) if hw else 1.0, {"*": total.overall_rate})]
        print(f"single-region WER {total.single_rate:.2f}%  overlap-region WER {total.overlap_rate:.2f}%")
    else:
        bcfg = benchmark.BenchmarkConfig(seed=rc.seed, noise_std=rc.oracle.noise_std,
                                         overlap_confusion=rc.oracle.overlap_confusion,
                                         feature_share=rc.orchestrator.cost.feature_share,
                                         embed_jitter=rc.embed_jitter, max_distractors=args.distractors)
        known = {}
        if (corpus / "speakers.tsv").exists():
            from .core import read_embeddings
            known = dict(read_embeddings(corpus / "speakers.tsv"))
        for st in streams.values():
            known.update(st.embeddings)
        cases = benchmark.cases_from_mixtures(list(streams.values()), known, args.distractors, rc.seed)
        for c, name in zip(cases, streams):
            c.overlap = overlaps[name] or c.overlap
        res = benchmark.run_grid(cases, bcfg, ns=args.n, methods=args.methods,
                                 sc_only_n=args.sc_only_n or None)
        rows = res.rows()
        print(f"baseline: single-region WER {res.baseline.wer.single_rate:.2f}%  "
              f"overlap-region WER {res.baseline.wer.overlap_rate:.2f}%")
        for (n, m), r in sorted(res.grid.items()):
            print(f"SI+SC N={n} {m}: single-region WER {r.wer.single_rate:.2f}%  "
                  f"overlap-region WER {r.wer.overlap_rate:.2f}%  HW {r.hw:.2f}")
    text = emit_report(rows, stats, args.out, plots=not args.no_plots)
    print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ovlasr", description="Overlap-aware streaming ASR simulator.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, manifest=True):
        sp.add_argument("--seed", type=int, default=None, help="random seed (overrides the manifest)")
        if manifest:
            sp.add_argument("--manifest", help="JSON run manifest (see README for keys)")

    sp = sub.add_parser("synth-pool", help="generate a pool of single-speaker utterances")
    sp.add_argument("--out", required=True, help="output pool directory")
    sp.add_argument("--speakers", type=int, default=20, help="number of speakers")
    sp.add_argument("--utts", type=int, default=6, help="utterances per speaker")
    sp.add_argument("--min-len", type=float, default=2.0, help="shortest utterance (s)")
    sp.add_argument("--max-len", type=float, default=16.0, help="longest utterance (s)")
    sp.add_argument("--audio", action="store_true", help="also write tone-coded WAV audio")
    common(sp, manifest=False)
    sp.set_defaults(func=cmd_synth_pool)

    sp = sub.add_parser("mix", help="mix pool utterances into two-speaker bundles")
    sp.add_argument("--pool", required=True, help="pool directory from synth-pool")
    sp.add_argument("--count", type=int, required=True, help="number of mixtures")
    sp.add_argument("--out", required=True, help="output corpus directory")
    sp.add_argument("--interruption-ratio", type=float, default=0.5, help="share of interruptions")
    sp.add_argument("--max-overlap-s", type=float, default=None, help="cap on transition overlap (s)")
    common(sp, manifest=False)
    sp.set_defaults(func=cmd_mix)

    sp = sub.add_parser("train", help="train the overlap head and the toy SC model")
    sp.add_argument("--corpus", required=True, help="mixture corpus directory")
    sp.add_argument("--out", required=True, help="checkpoint directory")
    sp.add_argument("--epochs", type=int, default=200, help="overlap-head epochs (0 keeps the initialization)")
    sp.add_argument("--sc-epochs", type=int, default=None, help="toy SC epochs (default: 20, or 0 with --epochs 0)")
    sp.add_argument("--toy-examples", type=int, default=3000, help="toy SC training mixtures")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("run", help="transcribe one bundle (or every bundle of a corpus)")
    sp.add_argument("--bundle", required=True, help="bundle or corpus directory")
    sp.add_argument("--out", default="run_out", help="output directory")
    sp.add_argument("--head", help="overlap-head checkpoint from train")
    sp.add_argument("--oracle", action="store_true", help="fit the overlap head on the fly")
    sp.add_argument("--noiseless", action="store_true", help="oracle models without noise")
    sp.add_argument("--force-single", action="store_true", help="detector forced negative; no SC model")
    sp.add_argument("--n", type=int, default=None, help="number of recent speakers / decoders")
    sp.add_argument("--system", choices=[SI_ONLY, SI_SC, SC_ONLY], default=None, help="acoustic system")
    sp.add_argument("--serve", action="store_true", help="serve the framed protocol instead")
    sp.add_argument("--host", default="127.0.0.1", help="serve address")
    sp.add_argument("--port", type=int, default=8765, help="serve port (0 picks a free one)")
    sp.add_argument("--connections", type=int, default=1, help="clients to serve before exiting")
    common(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("eval", help="score hypotheses or run the N x method grid")
    sp.add_argument("--corpus", required=True, help="reference corpus directory")
    sp.add_argument("--out", required=True, help="report directory")
    sp.add_argument("--hyp", help="hypotheses from run (one sub-directory per bundle)")
    sp.add_argument("--label", default="run", help="model name for a --hyp row")
    sp.add_argument("--n", type=parse_int_list, default=[2, 3, 4], help="comma-separated N values")
    sp.add_argument("--methods", type=parse_methods, default=list(METHODS), help="'all' or e.g. LAST,MEAN")
    sp.add_argument("--sc-only-n", type=int, default=4, help="N of the SC-only row (0 omits it)")
    sp.add_argument("--distractors", type=int, default=2, help="max extra enrolled speakers per stream")
    sp.add_argument("--no-plots", action="store_true", help="skip PNG figures")
    common(sp)
    sp.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "seed", None) is None and args.command in ("synth-pool", "mix"):
        args.seed = 0
    try:
        return args.func(args)
    except (ValidationError, FormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (DivergenceError, FloatingPointError) as exc:
        seed = getattr(args, "seed", None)
        print(f"numeric failure (seed {seed}): {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
