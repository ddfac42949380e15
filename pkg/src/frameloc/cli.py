"""Command-line entry point wiring the library into reproducible pipelines.

Exit codes: 0 success, 1 validation or runtime failure, 2 usage error.
Reports go to standard output, diagnostics to standard error, and no
subcommand writes anywhere but the paths given by its flags.

Handlers import the numeric modules lazily so that ``--threads`` can pin
thread-pool environment variables before any array library loads.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
from typing import Sequence

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


def _pin_threads(n: int) -> None:
    for var in _THREAD_VARS:
        os.environ[var] = str(n)


def _file_sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _cmd_validate(args: argparse.Namespace) -> int:
    from .datamodel import Corpus
    from .store import read_embeddings, read_manifest_set

    ms = read_manifest_set(args.manifest)
    embeddings = read_embeddings(args.embeddings)
    corpus = Corpus(ms.manifests, ms.qa, ms.labels, ms.composites, embeddings)
    violations = corpus.validate()
    for v in violations:
        print(f"[{v.code}] {v.subject}: {v.detail}")
    print(f"{len(violations)} violations")
    return 1 if violations else 0


def _cmd_build_composite(args: argparse.Namespace) -> int:
    from .composite import build_composites
    from .store import ManifestSet, read_manifest_set, write_manifest_set

    ms = read_manifest_set(args.manifest)
    composites = build_composites(
        ms.manifests, group_size=args.group_size, seed=args.seed
    )
    out = ManifestSet(ms.manifests, ms.qa, ms.labels, tuple(composites))
    write_manifest_set(out, args.out)
    print(f"wrote {len(composites)} composites over {len(ms.manifests)} videos to {args.out}")
    return 0


def _cmd_gen_labels(args: argparse.Namespace) -> int:
    from .composite import generate_median_labels
    from .store import ManifestSet, read_manifest_set, write_manifest_set

    ms = read_manifest_set(args.manifest)
    labels = generate_median_labels(ms.composites, ms.qa)
    out = ManifestSet(ms.manifests, ms.qa, tuple(labels), ms.composites)
    write_manifest_set(out, args.out)
    print(f"wrote {len(labels)} labels to {args.out}")
    return 0


def _question_matrix(corpus, items):
    import numpy as np

    from .datamodel import EmbeddingMatrix

    rows = np.stack([corpus.embeddings.row(i.question_embedding_id) for i in items])
    return EmbeddingMatrix(tuple(i.question_id for i in items), rows)


def _cmd_score(args: argparse.Namespace) -> int:
    from .relevance import relevance_matrix, relevance_to_tsv
    from .store import load_corpus

    corpus = load_corpus(args.manifest, args.embeddings)
    if not corpus.qa:
        raise ValueError("corpus has no questions to score")
    frame_ids = [fid for m in corpus.manifests for fid in m.frame_ids]
    r = relevance_matrix(corpus.embeddings.select(frame_ids), _question_matrix(corpus, corpus.qa))
    with open(args.out, "w", encoding="utf-8", newline="\n") as f:
        f.write(relevance_to_tsv(r))
    print(f"wrote {len(r.frame_ids)} x {len(r.question_ids)} scores to {args.out}")
    return 0


def _cmd_localize(args: argparse.Namespace) -> int:
    from .relevance import localize_top1, relevance_matrix
    from .store import load_corpus, write_predictions

    corpus = load_corpus(args.manifest, args.embeddings)
    if not corpus.qa:
        raise ValueError("corpus has no questions to localize")
    predictions: dict[str, int] = {}
    for item in corpus.qa:
        frames = corpus.embeddings.select(corpus.frame_sequence_for(item))
        r = relevance_matrix(frames, _question_matrix(corpus, [item]))
        predictions[item.question_id] = localize_top1(r, item.question_id)
    write_predictions(predictions, args.out)
    print(f"wrote {len(predictions)} predictions to {args.out}")
    return 0


def _cmd_select(args: argparse.Namespace) -> int:
    from .relevance import relevance_matrix, select_frames
    from .store import load_corpus

    corpus = load_corpus(args.manifest, args.embeddings)
    by_video: dict[str, list] = {}
    for item in corpus.qa:
        by_video.setdefault(item.video_id, []).append(item)
    for m in corpus.manifests:
        items = by_video.get(m.video_id)
        if not items:
            continue
        r = relevance_matrix(corpus.embeddings.select(m.frame_ids), _question_matrix(corpus, items))
        chosen = select_frames(r, args.k, method=args.method)
        print(f"{m.video_id}\t{','.join(str(i) for i in chosen)}")
    return 0


def _cmd_lfo(args: argparse.Namespace) -> int:
    from .influence import ExternalScorer, batch_influence, surrogate_scorer
    from .store import load_corpus, write_predictions

    corpus = load_corpus(args.manifest, args.embeddings)
    if args.scorer == "surrogate":
        scorer = surrogate_scorer
        external = None
    elif args.scorer.startswith("exec:"):
        external = ExternalScorer(args.scorer[len("exec:"):], timeout=args.timeout)
        scorer = external
    else:
        raise ValueError(
            f"unknown scorer {args.scorer!r}; use 'surrogate' or 'exec:<command>'"
        )
    try:
        result = batch_influence(scorer, corpus)
    finally:
        if external is not None:
            external.close()
    predictions = {p.question_id: p.predicted_key_frame for p in result.profiles}
    write_predictions(predictions, args.out)
    for qid, message in result.failures:
        print(f"scorer failure on {qid}: {message}", file=sys.stderr)
    print(f"wrote {len(predictions)} predictions to {args.out}")
    return 1 if result.failures else 0


def _cmd_fit_projector(args: argparse.Namespace) -> int:
    from .relevance import fit_projector
    from .store import read_embeddings, save_projector

    inputs = read_embeddings(args.inputs)
    targets = read_embeddings(args.targets)
    p = fit_projector(inputs, targets, ridge=args.ridge)
    save_projector(p, args.out)
    print(f"fitted {p.d_in} -> {p.d_out} projector on {inputs.count} pairs; wrote {args.out}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    from . import evalkit
    from .datamodel import MetricEntry
    from .store import ManifestError, read_manifest_set, read_predictions

    ms = read_manifest_set(args.manifest)
    requested = [m.strip() for m in args.metrics.split(",") if m.strip()]
    if not requested:
        raise ValueError("no metrics requested")

    predictions: dict[str, int] | None
    try:
        predictions = read_predictions(args.predictions)
    except ManifestError as exc:
        print(f"note: prediction set unparseable, reporting N/A ({exc})", file=sys.stderr)
        predictions = None
    if predictions is not None and not predictions:
        print("note: prediction set empty, reporting N/A", file=sys.stderr)
        predictions = None

    entries = []
    for token in requested:
        if token == "qa":
            name, population = "qa_accuracy", len(ms.qa)
            compute = lambda p: evalkit.qa_accuracy(p, ms.qa)
        elif token == "strict":
            name, population = "localization_strict", len(ms.labels)
            compute = lambda p: evalkit.localization_accuracy_strict(p, ms.labels)
        elif token == "segment":
            name, population = "localization_segment", len(ms.qa)
            compute = lambda p: evalkit.localization_accuracy_segment(p, ms.composites, ms.qa)
        elif token.startswith("tol:"):
            try:
                tol = int(token[len("tol:"):])
            except ValueError:
                raise ValueError(f"bad tolerance in metric {token!r}") from None
            name, population = f"localization_tol_{tol}", len(ms.labels)
            compute = lambda p, t=tol: evalkit.localization_tolerance(p, ms.labels, t)
        else:
            raise ValueError(
                f"unknown metric {token!r}; choose qa, strict, segment or tol:<frames>"
            )
        if predictions is None:
            entries.append(MetricEntry(name, None, 0, population, missing=population))
        else:
            entries.append(compute(predictions))

    provenance = evalkit.config_hash(
        {
            "command": "eval",
            "metrics": ",".join(requested),
            "format": args.format,
            "predictions_sha256": _file_sha256(args.predictions),
            "manifest_sha256": _file_sha256(args.manifest),
        }
    )
    sys.stdout.write(evalkit.render_report(entries, fmt=args.format, provenance=provenance))
    return 0


def _cmd_baseline(args: argparse.Namespace) -> int:
    from . import evalkit

    seed = evalkit.DEFAULT_SEED if args.seed is None else args.seed
    if args.metric == "qa":
        entry = evalkit.random_qa_baseline(args.trials, seed=seed)
    else:
        entry = evalkit.random_localization_baseline(
            args.trials, n_frames=args.frames, seed=seed
        )
    sys.stdout.write(evalkit.render_report([entry], fmt="text"))
    return 0


def _cmd_gen_synthetic(args: argparse.Namespace) -> int:
    from .store import ManifestSet, write_embeddings, write_manifest_set
    from .synthetic import planted_corpus, random_corpus

    make = planted_corpus if args.mode == "planted" else random_corpus
    corpus = make(
        n_videos=args.videos,
        frames_per_video=args.frames,
        questions_per_video=args.questions,
        dim=args.dim,
        seed=args.seed,
        fps=args.fps,
    )
    ms = ManifestSet(corpus.manifests, corpus.qa, corpus.labels, corpus.composites)
    write_manifest_set(ms, args.out_manifest)
    n_bytes = write_embeddings(corpus.embeddings, args.out_embeddings)
    print(
        f"wrote {len(corpus.manifests)} videos, {len(corpus.qa)} questions; "
        f"embeddings {n_bytes} bytes"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="frameloc",
        description="Frame localization pipelines over precomputed embeddings.",
    )
    parser.add_argument(
        "--threads",
        type=int,
        metavar="N",
        help="cap numeric-library thread pools (applied before arrays load)",
    )
    public = (
        "validate",
        "build-composite",
        "gen-labels",
        "score",
        "localize",
        "select",
        "lfo",
        "fit-projector",
        "eval",
        "baseline",
    )
    sub = parser.add_subparsers(
        dest="command", required=True, metavar="{%s}" % ",".join(public)
    )

    p = sub.add_parser("validate", help="check a corpus and report violations")
    p.add_argument("manifest")
    p.add_argument("embeddings")
    p.set_defaults(handler=_cmd_validate)

    p = sub.add_parser("build-composite", help="splice videos into composite groups")
    p.add_argument("manifest")
    p.add_argument("--group-size", type=int, default=3, metavar="G")
    p.add_argument("--seed", type=int, default=0, metavar="S")
    p.add_argument("--out", required=True, metavar="MANIFEST")
    p.set_defaults(handler=_cmd_build_composite)

    p = sub.add_parser("gen-labels", help="derive median-frame labels from composites")
    p.add_argument("manifest")
    p.add_argument("--out", required=True, metavar="MANIFEST")
    p.set_defaults(handler=_cmd_gen_labels)

    p = sub.add_parser("score", help="write the frame-question relevance table")
    p.add_argument("manifest")
    p.add_argument("embeddings")
    p.add_argument("--out", required=True, metavar="TSV")
    p.set_defaults(handler=_cmd_score)

    p = sub.add_parser("localize", help="predict the top-1 frame per question")
    p.add_argument("manifest")
    p.add_argument("embeddings")
    p.add_argument("--out", required=True, metavar="PRED")
    p.set_defaults(handler=_cmd_localize)

    p = sub.add_parser("select", help="pick a covering frame subset per video")
    p.add_argument("manifest")
    p.add_argument("embeddings")
    p.add_argument("-k", type=int, required=True, help="subset size")
    p.add_argument("--method", choices=("exact", "greedy"), default="greedy")
    p.set_defaults(handler=_cmd_select)

    p = sub.add_parser("lfo", help="leave-frame-out influence per question")
    p.add_argument("manifest")
    p.add_argument("embeddings")
    p.add_argument(
        "--scorer",
        default="surrogate",
        metavar="SCORER",
        help="'surrogate' or 'exec:<command>' for a line-protocol child process",
    )
    p.add_argument("--timeout", type=float, default=30.0, metavar="SECONDS")
    p.add_argument("--out", required=True, metavar="PRED")
    p.set_defaults(handler=_cmd_lfo)

    p = sub.add_parser("fit-projector", help="fit a linear map between embedding spaces")
    p.add_argument("inputs", help="input-space vectors (binary embedding file)")
    p.add_argument("targets", help="target-space vectors with matching ids")
    p.add_argument("--ridge", type=float, default=0.0, metavar="R")
    p.add_argument("--out", required=True, metavar="JSON")
    p.set_defaults(handler=_cmd_fit_projector)

    p = sub.add_parser("eval", help="score predictions against a corpus")
    p.add_argument("predictions")
    p.add_argument("manifest")
    p.add_argument(
        "--metrics",
        default="qa,strict",
        metavar="LIST",
        help="comma list of qa, strict, segment, tol:<frames>",
    )
    p.add_argument("--format", choices=("text", "tsv"), default="text")
    p.set_defaults(handler=_cmd_eval)

    p = sub.add_parser("baseline", help="Monte-Carlo random baseline for a metric")
    p.add_argument("--metric", choices=("qa", "strict"), required=True)
    p.add_argument("--trials", type=int, default=100_000, metavar="N")
    p.add_argument("--seed", type=int, default=None, metavar="S")
    p.add_argument(
        "--frames", type=int, default=100, metavar="F",
        help="frames per video for the strict baseline",
    )
    p.set_defaults(handler=_cmd_baseline)

    # Undocumented: generates the planted/random corpora the test suite uses,
    # so fixtures stay generated instead of checked in as opaque binaries.
    p = sub.add_parser("gen-synthetic")
    p.add_argument("--mode", choices=("planted", "random"), default="planted")
    p.add_argument("--videos", type=int, default=10)
    p.add_argument("--frames", type=int, default=10)
    p.add_argument("--questions", type=int, default=1)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fps", type=float, default=10.0)
    p.add_argument("--out-manifest", required=True)
    p.add_argument("--out-embeddings", required=True)
    p.set_defaults(handler=_cmd_gen_synthetic)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return 2
        _pin_threads(args.threads)
    try:
        return args.handler(args)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
