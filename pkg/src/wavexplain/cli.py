"""Command-line entry points for the full pipeline: synthetic data
generation, classifier and interpreter training, explanation export, metric
evaluation, the listening-study service, and score aggregation.

Exit codes: 0 success, 2 invalid configuration, 3 missing artifact (the
diagnostic names the path), 1 any other failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import (
    ConfigError,
    classifier_config,
    classifier_train_config,
    echo_config,
    interpreter_config,
    load_config,
    loss_weights,
    optimizer_config,
)


class MissingArtifactError(FileNotFoundError):
    """A required checkpoint or artifact is absent; message names the path."""


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(f"missing {what}: {path}")
    return path


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_corpus(cfg: dict):
    from .datasets import load_wav_corpus

    corpus_dir = Path(cfg["output_dir"]) / "corpus"
    manifest = _require(corpus_dir / "manifest.csv", "corpus manifest")
    return load_wav_corpus(corpus_dir, manifest)


def _load_classifier(cfg: dict):
    from .classifier import freeze_classifier, load_classifier

    path = _require(Path(cfg["output_dir"]) / "classifier.pt", "classifier checkpoint")
    clf, sidecar = load_classifier(path)
    freeze_classifier(clf)
    return clf, sidecar


def _load_interpreter(cfg: dict, clf):
    from .interpreter import load_interpreter

    path = _require(Path(cfg["output_dir"]) / "interpreter.pt", "interpreter checkpoint")
    return load_interpreter(path, clf)


def cmd_gen_data(cfg: dict) -> int:
    from .datasets import export_corpus, generate_synthetic_corpus

    ds = cfg["dataset"]
    corpus = generate_synthetic_corpus(
        num_classes=ds["num_classes"],
        per_class=ds["per_class"],
        clip_seconds=ds["clip_seconds"],
        sample_rate=ds["sample_rate"],
        seed=cfg["seed"],
    )
    out = _out_dir(cfg) / "corpus"
    manifest = export_corpus(corpus, out)
    digest = corpus.digest()
    (out / "digest.txt").write_text(digest + "\n", encoding="utf-8")
    print(f"corpus: {manifest} ({len(corpus.samples)} clips, digest {digest[:16]})")
    return 0


def cmd_train_clf(cfg: dict) -> int:
    from .classifier import evaluate_accuracy, save_classifier, train_classifier

    corpus = _load_corpus(cfg)
    clf_cfg = classifier_config(cfg, corpus.num_classes)
    train_cfg = classifier_train_config(cfg)
    clf, history = train_classifier(corpus, train_cfg, seed=cfg["seed"], model_cfg=clf_cfg)
    valid_acc = evaluate_accuracy(clf, corpus, "valid")
    test_acc = evaluate_accuracy(clf, corpus, "test")
    path = _out_dir(cfg) / "classifier.pt"
    save_classifier(
        clf, path, corpus.class_names, metrics={"valid_acc": valid_acc, "test_acc": test_acc}
    )
    print(f"classifier: {path} (valid acc {valid_acc:.3f}, test acc {test_acc:.3f})")
    return 0


def cmd_train_itp(cfg: dict) -> int:
    from .interpreter import build_interpreter, save_interpreter
    from .training import train_interpreter

    corpus = _load_corpus(cfg)
    clf, _ = _load_classifier(cfg)
    itp = build_interpreter(interpreter_config(cfg), clf, seed=cfg["seed"])
    out = _out_dir(cfg)
    history_path = out / "history.jsonl"
    history_path.unlink(missing_ok=True)
    itp, history = train_interpreter(
        clf,
        itp,
        corpus,
        w=loss_weights(cfg),
        opt_cfg=optimizer_config(cfg),
        seed=cfg["seed"],
        history_path=history_path,
    )
    path = out / "interpreter.pt"
    save_interpreter(itp, path, clf, metrics={"final_valid_total": history[-1]["valid_total"]})
    print(f"interpreter: {path} ({len(history)} epochs, history {history_path})")
    return 0


def cmd_explain(cfg: dict) -> int:
    from .study import export_explanations

    corpus = _load_corpus(cfg)
    clf, _ = _load_classifier(cfg)
    itp = _load_interpreter(cfg, clf)
    manifest = export_explanations(
        clf,
        itp,
        corpus,
        Path(cfg["output_dir"]) / "explanations",
        num_stimuli=cfg["study"]["num_stimuli"],
        split=cfg["eval"]["split"],
    )
    print(f"study manifest: {manifest}")
    return 0


def cmd_eval(cfg: dict) -> int:
    from .metrics import (
        GradientSaliencyExplainer,
        IdentityExplainer,
        SilenceExplainer,
        evaluate_suite,
        save_report,
    )

    corpus = _load_corpus(cfg)
    clf, _ = _load_classifier(cfg)
    name = cfg["eval"]["explainer"]
    if name == "masked-synthesis":
        explainer = _load_interpreter(cfg, clf)
    elif name == "identity":
        explainer = IdentityExplainer()
    elif name == "silence":
        explainer = SilenceExplainer()
    elif name == "gradient-saliency":
        explainer = GradientSaliencyExplainer()
    else:
        raise ConfigError(f"unknown eval.explainer: {name!r}")
    report = evaluate_suite(clf, explainer, corpus, split=cfg["eval"]["split"])
    json_path, _ = save_report(report, Path(cfg["output_dir"]) / "eval")
    print(report.to_text(), end="")
    print(f"report: {json_path}")
    return 0


def cmd_serve_study(cfg: dict) -> int:
    import uvicorn

    from .study import create_app

    out = Path(cfg["output_dir"])
    manifest = _require(out / "explanations" / "manifest.json", "study manifest")
    app = create_app(
        manifest,
        out / "study" / "ratings.jsonl",
        static_dir=cfg["study"]["static_dir"],
    )
    host, port = cfg["study"]["host"], int(cfg["study"]["port"])
    print(f"serving study at http://{host}:{port}")
    uvicorn.run(app, host=host, port=port, log_level="warning")
    return 0


def cmd_mos(cfg: dict, ratings: str | None, bootstrap: bool) -> int:
    from .study import load_ratings, mos_summary

    path = Path(ratings) if ratings else Path(cfg["output_dir"]) / "study" / "ratings.jsonl"
    _require(path, "ratings log")
    records = load_ratings(path)
    if not records:
        print("no ratings recorded yet", file=sys.stderr)
        return 1
    summary = mos_summary(records, method="bootstrap" if bootstrap else "t")
    out = _out_dir(cfg) / "mos.json"
    out.write_text(json.dumps(summary.as_dict(), indent=2) + "\n", encoding="utf-8")
    print(json.dumps(summary.as_dict(), indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wavexplain",
        description="Train and evaluate listenable time-domain explanations "
        "of a frozen audio classifier.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "gen-data": "generate the synthetic labeled corpus",
        "train-clf": "train the audio classifier on the corpus",
        "train-itp": "train the explanation interpreter against the frozen classifier",
        "explain": "export listening-study stimuli for trained checkpoints",
        "eval": "run the faithfulness metric suite and write a report",
        "serve-study": "serve the listening-study rating service",
        "mos": "aggregate recorded ratings into mean-opinion scores",
    }
    for name, help_text in commands.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="YAML config path")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="dotted-path config override (repeatable)",
        )
        if name == "mos":
            p.add_argument("--ratings", default=None, help="ratings JSONL path")
            p.add_argument(
                "--bootstrap",
                action="store_true",
                help="use bootstrap-percentile confidence intervals",
            )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
        echo_config(cfg, cfg["output_dir"])
        if args.command == "gen-data":
            return cmd_gen_data(cfg)
        if args.command == "train-clf":
            return cmd_train_clf(cfg)
        if args.command == "train-itp":
            return cmd_train_itp(cfg)
        if args.command == "explain":
            return cmd_explain(cfg)
        if args.command == "eval":
            return cmd_eval(cfg)
        if args.command == "serve-study":
            return cmd_serve_study(cfg)
        if args.command == "mos":
            return cmd_mos(cfg, args.ratings, args.bootstrap)
        raise AssertionError(f"unhandled command {args.command}")
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2
    except MissingArtifactError as exc:
        print(str(exc), file=sys.stderr)
        return 3
    except Exception as exc:  # one-line diagnostic, nonzero exit
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
