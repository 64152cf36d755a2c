"""Command-line harness: evaluate, train-scorer, simulate, fit-mechanics, ingest.

Every command reads one TOML config (flags only override fields), writes
its outputs plus a verbatim copy of the config into the output directory,
and reports failures as machine-readable JSON on stderr with a stable
exit-code mapping: 2 config, 3 data, 4 runtime/transport.
"""

from __future__ import annotations

import argparse
import json
import re
import shutil
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import schemas
from .behavior import (
    MarkovProvider,
    Persona,
    RemoteProvider,
    ReplyHistory,
    StubProvider,
    build_post_prompt,
    build_reply_prompt,
    markov_train,
    remote_generate,
)
from .config import ExperimentConfig, load_config
from .embeddings import (
    EmbeddingSource,
    FixtureEmbedder,
    FixtureLabels,
    HashEmbedder,
    RemoteEmbedder,
    RemoteLabels,
)
from .errors import ConfigError, InputError, TwonError
from .ingest import (
    Corpus,
    build_likelihood_dataset,
    build_reply_pairs,
    filter_corpus,
    select_active_users,
    split,
)
from .likelihood import (
    LikelihoodExample,
    TrainConfig,
    evaluate_classifier,
    save_params,
    train,
)
from .mechanics import MechanicsConfig, Observation, fit_mechanics
from .metrics import (
    LexiconQ,
    SamplePair,
    aggregate_report,
    discourse_metric_q,
)
from .model import (
    Message,
    MessageKind,
    Transcript,
    World,
    make_message_id,
    run_simulation,
)
from .seeding import derive_seed

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


def _write_json(path: Path, document: dict) -> None:
    path.write_text(json.dumps(document, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def _prepare_output(cfg: ExperimentConfig) -> Path:
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    copy = out / "config.toml"
    if copy.resolve() != cfg.path.resolve():
        shutil.copyfile(cfg.path, copy)
    return out


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9_-]+", "-", text).strip("-") or "default"


def _load_json(path: Path, what: str) -> dict:
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{what} {path}: invalid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise InputError(f"{what} {path}: expected a JSON object")
    return data


def _build_embedder(cfg: ExperimentConfig) -> EmbeddingSource:
    kind = cfg.metrics.embedder
    if kind == "hash":
        return HashEmbedder(dim=cfg.metrics.embedder_dim)
    if kind == "fixture":
        (path,) = cfg.data.require("embeddings_path")
        return FixtureEmbedder.from_file(path)
    endpoint = _require_endpoint(cfg)
    return RemoteEmbedder(
        endpoint,
        timeout=cfg.provider.timeout,
        retries=cfg.provider.retries,
        backoff=cfg.provider.backoff,
    )


def _require_endpoint(cfg: ExperimentConfig) -> str:
    if not cfg.provider.endpoint:
        raise ConfigError(
            "[provider] endpoint (or the TWON_SIDECAR_URL environment variable) "
            "is required here"
        )
    return cfg.provider.endpoint


def _load_personas(path: Path, language) -> dict[str, Persona]:
    raw = _load_json(path, "personas file")
    personas = {}
    for user_id, entry in raw.items():
        if not isinstance(entry, dict) or "name" not in entry or "party" not in entry:
            raise InputError(f"personas file: entry for {user_id!r} needs name and party")
        personas[user_id] = Persona(
            name=str(entry["name"]), party=str(entry["party"]), language=language
        )
    return personas


def _eval_samples(cfg: ExperimentConfig) -> list:
    (test_path,) = cfg.data.require("test_path")
    corpus = Corpus.load_jsonl(test_path)
    samples = [
        s for s in corpus.samples
        if s.kind is cfg.task and s.language is cfg.language
    ]
    if not samples:
        raise InputError(
            f"{test_path} has no samples for task={cfg.task.value} "
            f"language={cfg.language.value}"
        )
    return samples


def _generate_texts(cfg: ExperimentConfig, samples: list) -> list[str]:
    """One generated text per evaluation sample, per the provider config."""
    provider = cfg.provider
    if provider.kind == "stub":
        return [provider.stub_text or s.text for s in samples]

    if provider.kind == "markov":
        (train_path,) = cfg.data.require("train_path")
        train_corpus = Corpus.load_jsonl(train_path)
        texts = [
            s.text for s in train_corpus.samples
            if s.kind is cfg.task and s.language is cfg.language
        ]
        if not texts:
            raise InputError(
                f"{train_path} has no training texts for task={cfg.task.value} "
                f"language={cfg.language.value}"
            )
        model = markov_train(texts, order=provider.markov_order)
        return [
            _nonempty_markov(model, derive_seed(cfg.seed, "markov", i), provider.markov_max_tokens)
            for i in range(len(samples))
        ]

    endpoint = _require_endpoint(cfg)
    if cfg.task is MessageKind.POST:
        (personas_path,) = cfg.data.require("personas_path")
        personas = _load_personas(personas_path, cfg.language)
        prompts = []
        for s in samples:
            if s.user_id not in personas:
                raise InputError(f"personas file has no entry for user {s.user_id!r}")
            if not s.topic:
                raise InputError(
                    f"sample by {s.user_id!r} has no topic; post prompts need one"
                )
            prompts.append(build_post_prompt(personas[s.user_id], s.topic))
    else:
        histories: dict[str, ReplyHistory] = {}
        if cfg.data.train_path:
            (train_path,) = cfg.data.require("train_path")
            histories = build_reply_pairs(
                Corpus.load_jsonl(train_path), per_user_cap=cfg.likelihood.per_user_cap
            )
        prompts = []
        for i, s in enumerate(samples):
            parent = Message(
                id=f"eval-{i}",
                sender="source",
                recipient=s.user_id,
                tick=0,
                kind=MessageKind.POST,
                text=s.reply_to_text,
                topic=s.topic,
            )
            history = histories.get(s.user_id, ReplyHistory())
            prompts.append(build_reply_prompt(history, parent))
    return [
        remote_generate(
            endpoint,
            prompt,
            timeout=provider.timeout,
            retries=provider.retries,
            backoff=provider.backoff,
            max_tokens=provider.max_tokens,
            temperature=provider.temperature,
        )
        for prompt in prompts
    ]


def _nonempty_markov(model, seed: int, max_tokens: int) -> str:
    from .behavior import markov_generate

    for attempt in range(16):
        text = markov_generate(model, seed + attempt, max_tokens)
        if text:
            return text
    raise InputError("markov model keeps generating empty text")


def _attach_labels(cfg: ExperimentConfig, originals: list[str], generated: list[str]):
    """Per-category label vectors for both text columns, plus subclass names."""
    source_kind = cfg.metrics.labels_source
    if source_kind == "none":
        return None, None, None
    if not cfg.metrics.categories:
        raise ConfigError("[metrics] categories must be set when labels are enabled")
    if source_kind == "fixture":
        (path,) = cfg.data.require("labels_path")
        source = FixtureLabels.from_file(path)
    else:
        source = RemoteLabels(
            _require_endpoint(cfg),
            timeout=cfg.provider.timeout,
            retries=cfg.provider.retries,
            backoff=cfg.provider.backoff,
        )
    orig_labels: list[dict[str, list[float]]] = [{} for _ in originals]
    gen_labels: list[dict[str, list[float]]] = [{} for _ in generated]
    subclass_names: dict[str, tuple[str, ...]] = {}
    for category in cfg.metrics.categories:
        names_o, scores_o = source.labels(originals, category)
        names_g, scores_g = source.labels(generated, category)
        if names_o != names_g:
            raise InputError(f"label source returned differing subclasses for {category!r}")
        subclass_names[category] = tuple(names_o)
        for i in range(len(originals)):
            orig_labels[i][category] = scores_o[i].tolist()
            gen_labels[i][category] = scores_g[i].tolist()
    return orig_labels, gen_labels, subclass_names


def cmd_evaluate(cfg: ExperimentConfig) -> int:
    """Generate imitations for the test split and report the metric suite."""
    out = _prepare_output(cfg)
    samples = _eval_samples(cfg)
    originals = [s.text for s in samples]
    generated = _generate_texts(cfg, samples)

    embedder = _build_embedder(cfg)
    orig_vecs = embedder.embed(originals)
    gen_vecs = embedder.embed(generated)
    orig_labels, gen_labels, subclass_names = _attach_labels(cfg, originals, generated)

    pairs = [
        SamplePair(
            original=originals[i],
            generated=generated[i],
            original_embedding=orig_vecs[i],
            generated_embedding=gen_vecs[i],
            original_labels=None if orig_labels is None else orig_labels[i],
            generated_labels=None if gen_labels is None else gen_labels[i],
        )
        for i in range(len(samples))
    ]
    report = aggregate_report(
        pairs,
        n=cfg.metrics.n,
        k=cfg.metrics.k,
        seed=cfg.seed,
        max_n=cfg.metrics.max_n,
        smoothing_epsilon=cfg.metrics.smoothing_epsilon,
        distance=cfg.metrics.distance,
        subclass_names=subclass_names,
        task=cfg.task,
        language=cfg.language,
        condition=cfg.condition,
    )
    document = report.to_dict()
    schemas.validate_document(document, schemas.METRIC_REPORT, "metric report")
    stem = f"report_{cfg.task.value}_{cfg.language.value}_{_slug(cfg.condition)}"
    _write_json(out / f"{stem}.json", document)
    (out / f"{stem}.txt").write_text(report.to_text_table(), encoding="utf-8")
    print(f"wrote {out / (stem + '.json')}")
    print(report.to_text_table(), end="")
    return EXIT_OK


def _load_likelihood_jsonl(path: Path) -> list[LikelihoodExample]:
    examples = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}:{lineno}: invalid JSON: {exc}") from None
        for key in ("history", "post", "label"):
            if key not in raw:
                raise InputError(f"{path}:{lineno}: missing field {key!r}")
        try:
            examples.append(
                LikelihoodExample(
                    history=np.asarray(raw["history"], dtype=np.float64),
                    post=np.asarray(raw["post"], dtype=np.float64),
                    label=raw["label"],
                )
            )
        except (ValueError, InputError) as exc:
            raise InputError(f"{path}:{lineno}: {exc}") from None
    if not examples:
        raise InputError(f"{path}: no examples")
    return examples


def cmd_train_scorer(cfg: ExperimentConfig) -> int:
    """Train the reply-likelihood scorer and report train/test metrics."""
    out = _prepare_output(cfg)
    if cfg.data.likelihood_train_path and cfg.data.likelihood_test_path:
        train_path, test_path = cfg.data.require(
            "likelihood_train_path", "likelihood_test_path"
        )
        train_set = _load_likelihood_jsonl(train_path)
        test_set = _load_likelihood_jsonl(test_path)
    else:
        (corpus_path,) = cfg.data.require("train_path")
        corpus = Corpus.load_jsonl(corpus_path)
        embedder = _build_embedder(cfg)
        train_corpus, test_corpus = split(
            corpus, cfg.likelihood.train_fraction, cfg.seed
        )
        train_set = build_likelihood_dataset(train_corpus, embedder, cfg.seed)
        test_set = build_likelihood_dataset(test_corpus, embedder, cfg.seed)
        if not train_set or not test_set:
            raise InputError(
                "likelihood dataset construction produced an empty split; "
                "not enough users with both classes"
            )

    train_config = TrainConfig(
        lr=cfg.likelihood.lr,
        weight_decay=cfg.likelihood.weight_decay,
        epochs=cfg.likelihood.epochs,
        batch_size=cfg.likelihood.batch_size,
        seed=cfg.seed,
    )
    result = train(train_set, train_config)
    train_metrics = evaluate_classifier(
        result.params, train_set, threshold=cfg.likelihood.threshold
    )
    test_metrics = evaluate_classifier(
        result.params, test_set, threshold=cfg.likelihood.threshold
    )

    params_path = out / "scorer.bin"
    save_params(
        result.params,
        params_path,
        config=train_config.to_dict(),
        loss_curve=result.epoch_losses,
    )
    document = {
        "schema_version": 1,
        "d": result.params.d,
        "seed": cfg.seed,
        "threshold": cfg.likelihood.threshold,
        "examples": {"train": len(train_set), "test": len(test_set)},
        "train": train_metrics.to_dict(),
        "test": test_metrics.to_dict(),
    }
    _write_json(out / "f1_report.json", document)
    print(
        f"train f1={train_metrics.f1:.4f} test f1={test_metrics.f1:.4f} "
        f"params={params_path}"
    )
    return EXIT_OK


def _build_simulation_providers(cfg: ExperimentConfig) -> dict[str, object]:
    provider = cfg.provider
    agents = cfg.simulate.agents
    if provider.kind == "stub":
        return {aid: StubProvider(text=provider.stub_text) for aid in agents}
    if provider.kind == "markov":
        (train_path,) = cfg.data.require("train_path")
        corpus = Corpus.load_jsonl(train_path)
        texts = [s.text for s in corpus.samples if s.language is cfg.language]
        if not texts:
            raise InputError(f"{train_path} has no texts for language={cfg.language.value}")
        model = markov_train(texts, order=provider.markov_order)
        return {
            aid: MarkovProvider(
                model=model,
                seed=derive_seed(cfg.seed, aid),
                max_tokens=provider.markov_max_tokens,
            )
            for aid in agents
        }
    endpoint = _require_endpoint(cfg)
    histories: dict[str, ReplyHistory] = {}
    if cfg.data.train_path:
        (train_path,) = cfg.data.require("train_path")
        histories = build_reply_pairs(
            Corpus.load_jsonl(train_path), per_user_cap=cfg.likelihood.per_user_cap
        )
    return {
        aid: RemoteProvider(
            endpoint=endpoint,
            history=histories.get(aid, ReplyHistory()),
            timeout=provider.timeout,
            retries=provider.retries,
            backoff=provider.backoff,
            max_tokens=provider.max_tokens,
            temperature=provider.temperature,
        )
        for aid in agents
    }


def cmd_simulate(cfg: ExperimentConfig) -> int:
    """Run the tick loop and emit the q + realism bundle plus transcript."""
    out = _prepare_output(cfg)
    if not cfg.simulate.agents:
        raise ConfigError("[simulate] agents must list at least one agent id")
    lexicon_path, behavior_path, mechanics_path = cfg.data.require(
        "lexicon_path", "behavior_report_path", "mechanics_result_path"
    )
    behavior_report = _load_json(behavior_path, "behavior realism report")
    schemas.validate_document(
        behavior_report, schemas.METRIC_REPORT, "behavior realism report"
    )
    mechanics_result = _load_json(mechanics_path, "mechanics fit result")
    schemas.validate_document(
        mechanics_result, schemas.MECHANICS_RESULT, "mechanics fit result"
    )

    seed_messages = [
        Message(
            id=make_message_id(0, spec.sender, i),
            sender=spec.sender,
            recipient=spec.recipient,
            tick=0,
            kind=MessageKind.POST,
            text=spec.text,
            topic=spec.topic,
        )
        for i, spec in enumerate(cfg.simulate.seed_messages)
    ]
    world = World.create(
        cfg.simulate.agents, seed_messages=seed_messages, rng_seed=cfg.seed
    )
    behaviors = _build_simulation_providers(cfg)
    result = run_simulation(world, cfg.mechanics, behaviors, cfg.simulate.n_ticks)

    plugin = LexiconQ.from_file(lexicon_path)
    q_value = discourse_metric_q(result.transcript, plugin)

    transcript_path = out / "transcript.jsonl"
    result.transcript.dump_jsonl(transcript_path)
    bundle = {
        "schema_version": 1,
        "seed": cfg.seed,
        "n_ticks": cfg.simulate.n_ticks,
        "transcript_path": transcript_path.name,
        "message_count": len(result.transcript.messages),
        "q": {
            "value": q_value,
            "plugin": cfg.simulate.q_plugin,
            "lexicon": str(lexicon_path),
        },
        "behavior_realism": behavior_report,
        "mechanics_realism": mechanics_result,
    }
    schemas.validate_document(bundle, schemas.SIMULATION_BUNDLE, "simulation bundle")
    _write_json(out / "bundle.json", bundle)
    print(
        f"q={q_value:.4f} messages={len(result.transcript.messages)} "
        f"bundle={out / 'bundle.json'}"
    )
    return EXIT_OK


def cmd_fit_mechanics(cfg: ExperimentConfig) -> int:
    """Grid-search the configured mechanics family against observations."""
    out = _prepare_output(cfg)
    if not cfg.fit.family:
        raise ConfigError("[fit] family must list at least one mechanics config")
    (obs_path,) = cfg.data.require("observations_path")
    observations = []
    for lineno, line in enumerate(
        obs_path.read_text(encoding="utf-8").splitlines(), start=1
    ):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            raise InputError(f"{obs_path}:{lineno}: invalid JSON: {exc}") from None
        if "inbox" not in raw or "observed_feed" not in raw:
            raise InputError(f"{obs_path}:{lineno}: needs inbox and observed_feed")
        observations.append(
            Observation(
                inbox=tuple(Message.from_dict(m) for m in raw["inbox"]),
                observed_feed=tuple(Message.from_dict(m) for m in raw["observed_feed"]),
            )
        )
    best, loss = fit_mechanics(observations, cfg.fit.family, alpha=cfg.fit.alpha)
    document = {
        "schema_version": 1,
        "config": best.to_dict(),
        "loss": loss,
        "alpha": cfg.fit.alpha,
        "observations": len(observations),
        "family_size": len(cfg.fit.family),
    }
    schemas.validate_document(document, schemas.MECHANICS_RESULT, "mechanics fit result")
    _write_json(out / "mechanics_fit.json", document)
    print(f"best variant={best.variant.value} loss={loss:.4f}")
    return EXIT_OK


def cmd_ingest(cfg: ExperimentConfig) -> int:
    """Filter a raw corpus, keep the most active users, log provenance."""
    out = _prepare_output(cfg)
    (raw_path,) = cfg.data.require("raw_path")
    corpus = Corpus.load_jsonl(raw_path)
    input_size = len(corpus.samples)
    corpus = filter_corpus(corpus, min_chars=cfg.ingest.min_chars)
    corpus = select_active_users(corpus, top_k=cfg.ingest.top_k)
    corpus.dump_jsonl(out / "corpus.jsonl")
    document = {
        "schema_version": 1,
        "input_samples": input_size,
        "kept_samples": len(corpus.samples),
        "drops": dict(corpus.provenance),
        "distinct_users": len(corpus.users()),
    }
    _write_json(out / "provenance.json", document)
    print(
        f"kept {len(corpus.samples)}/{input_size} samples "
        f"({len(corpus.users())} users)"
    )
    return EXIT_OK


def _apply_overrides(cfg: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.output_dir is not None:
        cfg = replace(cfg, output_dir=Path(args.output_dir))
    if getattr(args, "n", None) is not None:
        cfg = replace(cfg, metrics=replace(cfg.metrics, n=args.n))
    if getattr(args, "k", None) is not None:
        cfg = replace(cfg, metrics=replace(cfg.metrics, k=args.k))
    if getattr(args, "endpoint", None) is not None:
        cfg = replace(cfg, provider=replace(cfg.provider, endpoint=args.endpoint))
    if getattr(args, "epochs", None) is not None:
        cfg = replace(cfg, likelihood=replace(cfg.likelihood, epochs=args.epochs))
    if getattr(args, "n_ticks", None) is not None:
        cfg = replace(cfg, simulate=replace(cfg.simulate, n_ticks=args.n_ticks))
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="twon",
        description="Social-network twin simulator and realism benchmark harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="path to the TOML config")
        p.add_argument("--seed", type=int, help="override [run] seed")
        p.add_argument("--output-dir", help="override [run] output_dir")

    p = sub.add_parser("evaluate", help="generate imitations and report metrics")
    common(p)
    p.add_argument("--n", type=int, help="override [metrics] n")
    p.add_argument("--k", type=int, help="override [metrics] k")
    p.add_argument("--endpoint", help="override [provider] endpoint")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("train-scorer", help="train the reply-likelihood scorer")
    common(p)
    p.add_argument("--epochs", type=int, help="override [likelihood] epochs")
    p.set_defaults(func=cmd_train_scorer)

    p = sub.add_parser("simulate", help="run the tick loop and bundle q with realism context")
    common(p)
    p.add_argument("--n-ticks", type=int, help="override [simulate] n_ticks")
    p.add_argument("--endpoint", help="override [provider] endpoint")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit-mechanics", help="grid-search mechanics against observations")
    common(p)
    p.set_defaults(func=cmd_fit_mechanics)

    p = sub.add_parser("ingest", help="filter a raw corpus and keep active users")
    common(p)
    p.set_defaults(func=cmd_ingest)
    return parser


def _error_payload(exc: Exception) -> dict:
    detail = {"type": type(exc).__name__, "message": str(exc)}
    for attr in ("agent_id", "tick", "prompt_id", "epoch"):
        value = getattr(exc, attr, None)
        if value is not None:
            detail[attr] = value
    return {"error": detail}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        cfg = _apply_overrides(cfg, args)
        return args.func(cfg)
    except ConfigError as exc:
        print(json.dumps(_error_payload(exc)), file=sys.stderr)
        return EXIT_CONFIG
    except InputError as exc:
        print(json.dumps(_error_payload(exc)), file=sys.stderr)
        return EXIT_DATA
    except TwonError as exc:
        print(json.dumps(_error_payload(exc)), file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(json.dumps(_error_payload(exc)), file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
