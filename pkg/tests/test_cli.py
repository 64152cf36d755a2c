from __future__ import annotations

import json
import subprocess
import sys

import pytest

from twon.behavior import Language
from twon.cli import main
from twon.ingest import Corpus, RawSample
from twon.likelihood import load_params
from twon.metrics import SamplePair, aggregate_report
from twon.model import Message, MessageKind

LONG = "this sample text is comfortably long enough to keep"


def _corpus_jsonl(path, samples):
    lines = [json.dumps(s.to_dict(), ensure_ascii=False) for s in samples]
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


def _posts(n=6):
    return [
        RawSample(
            user_id=f"u{i}",
            text=f"{LONG} number {i}",
            kind=MessageKind.POST,
            language=Language.EN,
            timestamp=i,
            topic="economy",
        )
        for i in range(n)
    ]


def _eval_config(tmp_path, test_path, extra=""):
    out = tmp_path / "out"
    cfg = tmp_path / "config.toml"
    cfg.write_text(
        f"""
[run]
seed = 7
output_dir = "{out}"

[data]
test_path = "{test_path}"

[metrics]
n = 4
k = 3
embedder_dim = 8
{extra}
""",
        encoding="utf-8",
    )
    return cfg, out


def test_evaluate_echo_stub_identity(tmp_path, capsys):
    test_path = _corpus_jsonl(tmp_path / "test.jsonl", _posts())
    cfg, out = _eval_config(tmp_path, test_path)
    assert main(["evaluate", "--config", str(cfg)]) == 0

    report_path = out / "report_post_en_in-context.json"
    report = json.loads(report_path.read_text(encoding="utf-8"))
    assert report["schema_version"] == 1
    assert report["n_samples"] == 4 and report["k_repetitions"] == 3
    assert report["metrics"]["bleu"] == {"mean": 1.0, "std": 0.0}
    assert report["metrics"]["embedding_distance"]["mean"] == 0.0
    assert (out / "report_post_en_in-context.txt").exists()
    assert (out / "config.toml").read_text(encoding="utf-8") == cfg.read_text(
        encoding="utf-8"
    )
    printed = capsys.readouterr().out
    assert "bleu" in printed and "1.0000" in printed


def test_evaluate_fixed_stub_text_and_overrides(tmp_path):
    test_path = _corpus_jsonl(tmp_path / "test.jsonl", _posts())
    cfg, out = _eval_config(
        tmp_path, test_path, extra='[provider]\nstub_text = "two words"\n'
    )
    other_out = tmp_path / "other"
    assert (
        main(
            [
                "evaluate", "--config", str(cfg),
                "--n", "2", "--k", "1", "--seed", "99",
                "--output-dir", str(other_out),
            ]
        )
        == 0
    )
    report = json.loads(
        (other_out / "report_post_en_in-context.json").read_text(encoding="utf-8")
    )
    assert report["seed"] == 99
    assert report["n_samples"] == 2 and report["k_repetitions"] == 1
    assert report["metrics"]["bleu"]["mean"] < 1.0
    assert not out.exists()  # the override redirected everything


def test_evaluate_with_fixture_labels(tmp_path):
    samples = _posts()
    test_path = _corpus_jsonl(tmp_path / "test.jsonl", samples)
    labels_path = tmp_path / "labels.json"
    labels_path.write_text(
        json.dumps(
            {
                "categories": {
                    "sentiment": {
                        "subclass_names": ["neg", "pos"],
                        "by_text": {
                            s.text: [0.1 * i, 1.0 - 0.1 * i]
                            for i, s in enumerate(samples)
                        },
                    }
                }
            }
        ),
        encoding="utf-8",
    )
    cfg, out = _eval_config(
        tmp_path, test_path, extra='labels = "fixture"\ncategories = ["sentiment"]\n'
    )
    # labels_path lives under [data]; append it to the existing table.
    body = cfg.read_text(encoding="utf-8").replace(
        f'test_path = "{test_path}"',
        f'test_path = "{test_path}"\nlabels_path = "{labels_path}"',
    )
    cfg.write_text(body, encoding="utf-8")
    assert main(["evaluate", "--config", str(cfg)]) == 0
    report = json.loads(
        (out / "report_post_en_in-context.json").read_text(encoding="utf-8")
    )
    assert report["metrics"]["sentiment"]["mean"] == pytest.approx(1.0)


def test_evaluate_remote_reply_task(tmp_path, http_stub):
    samples = [
        RawSample(
            user_id=f"u{i}",
            text=f"{LONG} reply {i}",
            kind=MessageKind.REPLY,
            language=Language.EN,
            timestamp=i,
            reply_to_text=f"parent post number {i} with plenty of words",
        )
        for i in range(4)
    ]
    test_path = _corpus_jsonl(tmp_path / "test.jsonl", samples)
    http_stub.routes["/generate"] = lambda payload: (200, {"text": "fine reply text"})
    cfg, out = _eval_config(
        tmp_path,
        test_path,
        extra=(
            "[provider]\n"
            'kind = "remote"\n'
            f'endpoint = "{http_stub.url}"\n'
            "retries = 0\n"
        ),
    )
    body = cfg.read_text(encoding="utf-8").replace("seed = 7", 'seed = 7\ntask = "reply"')
    cfg.write_text(body, encoding="utf-8")
    assert main(["evaluate", "--config", str(cfg), "--n", "3", "--k", "2"]) == 0
    # One generation call per sample, each carrying the reply constraint
    # and the parent text inside the rendered prompt.
    gen_calls = [p for path, p in http_stub.requests if path == "/generate"]
    assert len(gen_calls) == 4
    for i, payload in enumerate(gen_calls):
        assert payload["constraint"] == {"reply_only": True}
        assert f"parent post number {i}" in payload["prompt"]
    report = json.loads(
        (out / "report_reply_en_in-context.json").read_text(encoding="utf-8")
    )
    assert report["task"] == "reply"


def test_evaluate_markov_provider(tmp_path):
    test_path = _corpus_jsonl(tmp_path / "test.jsonl", _posts())
    train_path = _corpus_jsonl(tmp_path / "train.jsonl", _posts(8))
    cfg, out = _eval_config(
        tmp_path, test_path, extra='[provider]\nkind = "markov"\nmarkov_order = 1\n'
    )
    body = cfg.read_text(encoding="utf-8").replace(
        f'test_path = "{test_path}"',
        f'test_path = "{test_path}"\ntrain_path = "{train_path}"',
    )
    cfg.write_text(body, encoding="utf-8")
    assert main(["evaluate", "--config", str(cfg)]) == 0
    report = json.loads(
        (out / "report_post_en_in-context.json").read_text(encoding="utf-8")
    )
    assert 0.0 < report["metrics"]["bleu"]["mean"] <= 1.0


def test_exit_codes_and_error_json(tmp_path, capsys):
    # Missing config file: config error.
    assert main(["evaluate", "--config", str(tmp_path / "nope.toml")]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"]["type"] == "ConfigError"

    # Config fine, but the data filters everything out: data error.
    german = [
        RawSample(
            user_id="u0", text=LONG, kind=MessageKind.POST,
            language=Language.DE, timestamp=0,
        )
    ]
    test_path = _corpus_jsonl(tmp_path / "test.jsonl", german)
    cfg, _ = _eval_config(tmp_path, test_path)
    assert main(["evaluate", "--config", str(cfg)]) == 3
    err = json.loads(capsys.readouterr().err)
    assert err["error"]["type"] == "InputError"

    # Unreachable generation service: runtime error with a prompt id.
    reply = [
        RawSample(
            user_id="u0", text=LONG, kind=MessageKind.REPLY,
            language=Language.EN, timestamp=0, reply_to_text="parent",
        )
    ]
    test_path2 = _corpus_jsonl(tmp_path / "test2.jsonl", reply)
    cfg2, _ = _eval_config(
        tmp_path,
        test_path2,
        extra=(
            "[provider]\n"
            'kind = "remote"\n'
            'endpoint = "http://127.0.0.1:1"\n'
            "retries = 0\n"
            "timeout = 0.2\n"
        ),
    )
    body = cfg2.read_text(encoding="utf-8").replace("seed = 7", 'seed = 7\ntask = "reply"')
    cfg2.write_text(body, encoding="utf-8")
    assert main(["evaluate", "--config", str(cfg2), "--n", "1", "--k", "1"]) == 4
    err = json.loads(capsys.readouterr().err)
    assert err["error"]["type"] == "TransportError"
    assert "prompt_id" in err["error"]


def test_cli_subprocess_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "twon", "evaluate", "--config", str(tmp_path / "x.toml")],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 2
    assert json.loads(proc.stderr)["error"]["type"] == "ConfigError"


def _likelihood_jsonl(path, seed, n=24, d=4):
    import numpy as np

    rng = np.random.default_rng(seed)
    lines = []
    for i in range(n):
        label = i % 2
        base = np.abs(rng.normal(size=d)) + 0.1
        post = base if label else -base
        hist = (np.abs(rng.normal(size=(2, d))) + 0.1).tolist()
        lines.append(
            json.dumps({"history": hist, "post": post.tolist(), "label": label})
        )
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


def test_train_scorer_prebuilt_datasets(tmp_path, capsys):
    train_path = _likelihood_jsonl(tmp_path / "train.jsonl", seed=0)
    test_path = _likelihood_jsonl(tmp_path / "test.jsonl", seed=1, n=10)
    out = tmp_path / "out"
    cfg = tmp_path / "config.toml"
    cfg.write_text(
        f"""
[run]
seed = 5
output_dir = "{out}"

[data]
likelihood_train_path = "{train_path}"
likelihood_test_path = "{test_path}"

[likelihood]
lr = 0.02
epochs = 15
batch_size = 8
""",
        encoding="utf-8",
    )
    assert main(["train-scorer", "--config", str(cfg)]) == 0
    report = json.loads((out / "f1_report.json").read_text(encoding="utf-8"))
    assert report["schema_version"] == 1
    assert report["d"] == 4
    assert report["examples"] == {"train": 24, "test": 10}
    assert set(report["train"]) == {"f1", "precision", "recall", "accuracy"}
    params = load_params(out / "scorer.bin")
    assert params.d == 4
    sidecar = json.loads((out / "scorer.bin.json").read_text(encoding="utf-8"))
    assert len(sidecar["loss_curve"]) == 15
    assert sidecar["config"]["epochs"] == 15
    assert "f1" in capsys.readouterr().out

    # --epochs override shortens the loss curve.
    assert main(["train-scorer", "--config", str(cfg), "--epochs", "2"]) == 0
    sidecar = json.loads((out / "scorer.bin.json").read_text(encoding="utf-8"))
    assert len(sidecar["loss_curve"]) == 2


def test_train_scorer_from_corpus(tmp_path):
    # Users with replies to distinct posts plus other users' posts in window.
    samples = []
    for u in range(4):
        for j in range(3):
            samples.append(
                RawSample(
                    user_id=f"user{u}",
                    text=f"reply {u}-{j} {LONG}",
                    kind=MessageKind.REPLY,
                    language=Language.EN,
                    timestamp=10 * j + u,
                    reply_to_text=f"parent {u}-{j} {LONG}",
                )
            )
        for j in range(4):
            samples.append(
                RawSample(
                    user_id=f"user{u}",
                    text=f"post {u}-{j} {LONG}",
                    kind=MessageKind.POST,
                    language=Language.EN,
                    timestamp=5 + 7 * j + u,
                )
            )
    train_path = _corpus_jsonl(tmp_path / "corpus.jsonl", samples)
    out = tmp_path / "out"
    cfg = tmp_path / "config.toml"
    cfg.write_text(
        f"""
[run]
seed = 2
output_dir = "{out}"

[data]
train_path = "{train_path}"

[metrics]
embedder_dim = 8

[likelihood]
epochs = 3
train_fraction = 0.5
""",
        encoding="utf-8",
    )
    assert main(["train-scorer", "--config", str(cfg)]) == 0
    report = json.loads((out / "f1_report.json").read_text(encoding="utf-8"))
    assert report["examples"]["train"] > 0 and report["examples"]["test"] > 0
    assert report["d"] == 8


def _observations_jsonl(path):
    def msg(mid, tick):
        return Message(
            id=mid, sender="s", recipient="x", tick=tick,
            kind=MessageKind.POST, text=f"text for {mid}",
        ).to_dict()

    rows = []
    for base in range(3):
        inbox = [msg(f"m{base}-{i}", tick=i) for i in range(4)]
        observed = sorted(inbox, key=lambda m: -m["tick"])
        rows.append({"inbox": inbox, "observed_feed": observed})
    path.write_text(
        "".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8"
    )
    return path


def _fit_config(tmp_path, obs_path, out):
    cfg = tmp_path / "fit.toml"
    cfg.write_text(
        f"""
[run]
seed = 3
output_dir = "{out}"

[data]
observations_path = "{obs_path}"

[fit]
alpha = 0.5

[[fit.family]]
variant = "identity"

[[fit.family]]
variant = "chronological"

[[fit.family]]
variant = "reverse_chronological"
""",
        encoding="utf-8",
    )
    return cfg


def test_fit_mechanics_recovers_variant(tmp_path, capsys):
    obs_path = _observations_jsonl(tmp_path / "obs.jsonl")
    out = tmp_path / "fit_out"
    cfg = _fit_config(tmp_path, obs_path, out)
    assert main(["fit-mechanics", "--config", str(cfg)]) == 0
    result = json.loads((out / "mechanics_fit.json").read_text(encoding="utf-8"))
    assert result["config"]["variant"] == "reverse_chronological"
    assert result["loss"] == 0.0
    assert result["observations"] == 3
    assert result["family_size"] == 3
    assert "reverse_chronological" in capsys.readouterr().out


def test_fit_mechanics_requires_family_and_observations(tmp_path):
    obs_path = _observations_jsonl(tmp_path / "obs.jsonl")
    out = tmp_path / "out"
    cfg = tmp_path / "nofam.toml"
    cfg.write_text(
        f"""
[run]
seed = 1
output_dir = "{out}"

[data]
observations_path = "{obs_path}"
""",
        encoding="utf-8",
    )
    assert main(["fit-mechanics", "--config", str(cfg)]) == 2

    empty_obs = tmp_path / "empty.jsonl"
    empty_obs.write_text("", encoding="utf-8")
    cfg2 = _fit_config(tmp_path, empty_obs, out)
    assert main(["fit-mechanics", "--config", str(cfg2)]) == 3


def _behavior_report_json(path):
    pairs = [
        SamplePair(original=f"some original text {i}", generated=f"some generated text {i}")
        for i in range(4)
    ]
    report = aggregate_report(pairs, n=3, k=2, seed=0)
    path.write_text(report.to_json(), encoding="utf-8")
    return path


def _simulate_config(tmp_path, out, n_ticks=3):
    lexicon = tmp_path / "lexicon.txt"
    lexicon.write_text("# discourse terms\nclimate\n", encoding="utf-8")
    behavior_path = _behavior_report_json(tmp_path / "behavior_report.json")

    obs_path = _observations_jsonl(tmp_path / "obs.jsonl")
    fit_out = tmp_path / "fit_out"
    fit_cfg = _fit_config(tmp_path, obs_path, fit_out)
    assert main(["fit-mechanics", "--config", str(fit_cfg)]) == 0
    mechanics_path = fit_out / "mechanics_fit.json"

    cfg = tmp_path / "sim.toml"
    cfg.write_text(
        f"""
[run]
seed = 11
output_dir = "{out}"

[data]
lexicon_path = "{lexicon}"
behavior_report_path = "{behavior_path}"
mechanics_result_path = "{mechanics_path}"

[simulate]
n_ticks = {n_ticks}
agents = ["alice", "bob"]

[[simulate.seed_messages]]
sender = "alice"
text = "the climate debate opens"
topic = "climate"
""",
        encoding="utf-8",
    )
    return cfg


def test_simulate_bundle_and_replay(tmp_path, capsys):
    out1 = tmp_path / "run1"
    cfg = _simulate_config(tmp_path, out1)
    assert main(["simulate", "--config", str(cfg)]) == 0
    bundle = json.loads((out1 / "bundle.json").read_text(encoding="utf-8"))
    assert bundle["schema_version"] == 1
    assert bundle["n_ticks"] == 3
    assert bundle["message_count"] == 3  # directed echo ping-pong
    assert bundle["q"]["value"] == pytest.approx(1.0)  # echoes keep the term
    assert bundle["q"]["plugin"] == "lexicon"
    assert bundle["behavior_realism"]["schema_version"] == 1
    assert bundle["mechanics_realism"]["config"]["variant"] == "reverse_chronological"

    transcript_lines = (
        (out1 / "transcript.jsonl").read_text(encoding="utf-8").strip().splitlines()
    )
    assert len(transcript_lines) == 3
    first = json.loads(transcript_lines[0])
    assert first["tick"] == 1 and first["kind"] == "reply"
    assert first["topic"] == "climate"
    assert "q=1.0000" in capsys.readouterr().out

    # Same seed, fresh output dir: byte-identical transcript and bundle.
    out2 = tmp_path / "run2"
    assert main(["simulate", "--config", str(cfg), "--output-dir", str(out2)]) == 0
    assert (out2 / "transcript.jsonl").read_bytes() == (out1 / "transcript.jsonl").read_bytes()
    assert (out2 / "bundle.json").read_bytes() == (out1 / "bundle.json").read_bytes()

    # n_ticks override changes the run length.
    out3 = tmp_path / "run3"
    assert (
        main(
            ["simulate", "--config", str(cfg), "--output-dir", str(out3), "--n-ticks", "5"]
        )
        == 0
    )
    bundle3 = json.loads((out3 / "bundle.json").read_text(encoding="utf-8"))
    assert bundle3["message_count"] == 5


def test_simulate_rejects_invalid_reports(tmp_path):
    out = tmp_path / "out"
    cfg = _simulate_config(tmp_path, out)
    # Corrupt the behavior report: schema validation must fail the run.
    (tmp_path / "behavior_report.json").write_text(
        json.dumps({"schema_version": 1, "metrics": {}}), encoding="utf-8"
    )
    assert main(["simulate", "--config", str(cfg)]) == 3


def test_simulate_requires_agents(tmp_path):
    out = tmp_path / "out"
    cfg = _simulate_config(tmp_path, out)
    body = cfg.read_text(encoding="utf-8").replace('agents = ["alice", "bob"]', "agents = []")
    cfg.write_text(body, encoding="utf-8")
    assert main(["simulate", "--config", str(cfg)]) == 2


def test_ingest_provenance(tmp_path, capsys):
    samples = [
        RawSample(user_id="u1", text=f"{LONG} a", kind=MessageKind.POST,
                  language=Language.EN, timestamp=0),
        RawSample(user_id="u1", text=f"{LONG} b", kind=MessageKind.POST,
                  language=Language.EN, timestamp=1),
        RawSample(user_id="u2", text=f"{LONG} c", kind=MessageKind.POST,
                  language=Language.EN, timestamp=2),
        RawSample(user_id="u3", text=f"{LONG} d", kind=MessageKind.POST,
                  language=Language.EN, timestamp=3),
        RawSample(user_id="u1", text="see https://x.io now", kind=MessageKind.POST,
                  language=Language.EN, timestamp=4),
        RawSample(user_id="u2", text="www.y.org is worth reading today folks",
                  kind=MessageKind.POST, language=Language.EN, timestamp=5),
        RawSample(user_id="u3", text=f"RT {LONG}", kind=MessageKind.POST,
                  language=Language.EN, timestamp=6),
        RawSample(user_id="u3", text="too short", kind=MessageKind.POST,
                  language=Language.EN, timestamp=7),
    ]
    raw_path = _corpus_jsonl(tmp_path / "raw.jsonl", samples)
    out = tmp_path / "out"
    cfg = tmp_path / "config.toml"
    cfg.write_text(
        f"""
[run]
seed = 1
output_dir = "{out}"

[data]
raw_path = "{raw_path}"

[ingest]
min_chars = 32
top_k = 2
""",
        encoding="utf-8",
    )
    assert main(["ingest", "--config", str(cfg)]) == 0
    prov = json.loads((out / "provenance.json").read_text(encoding="utf-8"))
    assert prov["input_samples"] == 8
    assert prov["kept_samples"] == 3
    assert prov["drops"] == {"url": 2, "retweet": 1, "too_short": 1, "inactive_user": 1}
    assert prov["distinct_users"] == 2
    kept = Corpus.load_jsonl(out / "corpus.jsonl")
    assert {s.user_id for s in kept.samples} == {"u1", "u2"}
    assert "kept 3/8" in capsys.readouterr().out
