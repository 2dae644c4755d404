"""Command-line pipeline: artifacts, exit codes, manifests, determinism."""

import hashlib
import json
from collections import namedtuple

import pytest

from docrex import __version__
from docrex.cli import main
from docrex.corpus import (
    CANDIDATE_NP,
    NAMED,
    Document,
    Entity,
    Mention,
    Paragraph,
    Sentence,
    save_corpus,
)
from docrex.evaluation import GoldSet
from docrex.optim import TrainConfig
from docrex.protocol import ScorerServer, serve_relation_scorer
from docrex.relation import NativeRelationScorer, train_relation_detector
from docrex.resolution import load_graph_records


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """synth -> gen-ds -> train -> extract on a small seeded corpus."""
    root = tmp_path_factory.mktemp("cli")
    out = root / "runs"
    assert run("synth", "--num-docs", 40, "--seed", 7,
               "--cross-paragraph-fraction", 0.5,
               "--outdir", out, "--run-id", "data") == 0
    data = out / "data"
    assert run("gen-ds", "--corpus", data / "corpus.jsonl",
               "--kb", data / "kb.jsonl", "--seed", 7,
               "--outdir", out, "--run-id", "ds") == 0
    assert run("train", "--corpus", data / "corpus.jsonl",
               "--examples", out / "ds" / "examples.jsonl",
               "--iterations", 3, "--seed", 7, "--dim", 1 << 14,
               "--outdir", out, "--run-id", "model") == 0
    model = out / "model"
    queries = root / "queries.jsonl"
    with queries.open("w") as fh:
        for row in GoldSet.load(data / "gold.jsonl"):
            query = {k: row[k] for k in ("doc", "drug", "gene", "mutation")}
            fh.write(json.dumps(query) + "\n")
    assert run("extract", "--corpus", data / "corpus.jsonl",
               "--queries", queries,
               "--relation-model", model / "relation.json",
               "--graphs", model / "graphs.jsonl",
               "--pairs", model / "pairs.json",
               "--outdir", out, "--run-id", "run") == 0
    return {"out": out, "data": data, "model": model, "queries": queries,
            "results": out / "run" / "results.jsonl"}


class TestSynth:
    def test_artifacts(self, pipeline):
        data = pipeline["data"]
        for name in ("corpus.jsonl", "gold.jsonl", "kb.jsonl",
                     "certificates.jsonl", "manifest.json", "log.ndjson"):
            assert (data / name).exists(), name
        gold = GoldSet.load(data / "gold.jsonl")
        assert len(gold) > 0 and 0 < gold.positives() < len(gold)

    def test_deterministic(self, pipeline, tmp_path):
        out = tmp_path / "again"
        assert run("synth", "--num-docs", 40, "--seed", 7,
                   "--cross-paragraph-fraction", 0.5,
                   "--outdir", out, "--run-id", "data") == 0
        first = (pipeline["data"] / "corpus.jsonl").read_bytes()
        assert (out / "data" / "corpus.jsonl").read_bytes() == first

    def test_manifest_shape(self, pipeline):
        manifest = json.loads((pipeline["data"] / "manifest.json").read_text())
        assert manifest["command"] == "synth"
        assert manifest["version"] == __version__
        assert manifest["config"]["num_docs"] == 40
        assert manifest["config"]["seed"] == 7
        assert "corpus.jsonl" in manifest["outputs"]

    def test_log_is_ndjson(self, pipeline):
        lines = (pipeline["data"] / "log.ndjson").read_text().splitlines()
        assert lines and all("event" in json.loads(l) for l in lines)


class TestGenDs:
    def test_examples_and_hashed_inputs(self, pipeline):
        ds = pipeline["out"] / "ds"
        examples = (ds / "examples.jsonl").read_text().splitlines()
        assert len(examples) > 20
        manifest = json.loads((ds / "manifest.json").read_text())
        corpus = pipeline["data"] / "corpus.jsonl"
        digest = hashlib.sha256(corpus.read_bytes()).hexdigest()
        assert manifest["inputs"]["corpus"]["sha256"] == digest


class TestTrain:
    def test_artifacts(self, pipeline):
        model = pipeline["model"]
        for name in ("relation.json", "pairs.json", "graphs.jsonl",
                     "history.json", "training_curve.png", "manifest.json"):
            assert (model / name).exists(), name
        NativeRelationScorer.load(model / "relation.json")
        with (model / "graphs.jsonl").open() as fh:
            docs = {doc for doc, _ in load_graph_records(fh)}
        assert len(docs) > 10

    def test_history_grows(self, pipeline):
        history = json.loads((pipeline["model"] / "history.json").read_text())
        links = [rec["links"] for rec in history["resolution"]]
        assert links[-1] >= links[0]

    def test_unknown_config_table_rejected(self, pipeline, tmp_path):
        config = tmp_path / "train.toml"
        config.write_text("[mystery]\nx = 1\n")
        code = run("train", "--corpus", pipeline["data"] / "corpus.jsonl",
                   "--examples", pipeline["out"] / "ds" / "examples.jsonl",
                   "--config", config, "--outdir", tmp_path)
        assert code == 1


class TestExtract:
    def test_results_cover_queries(self, pipeline):
        queries = pipeline["queries"].read_text().splitlines()
        results = [json.loads(l) for l in
                   pipeline["results"].read_text().splitlines()]
        assert len(results) == len(queries)
        assert {r["decision"] for r in results} == {0, 1}
        positive = next(r for r in results if r["decision"] == 1)
        assert positive["evidences"][0]["segment"][0] >= 0

    def test_jobs_do_not_change_output(self, pipeline, tmp_path):
        for jobs, run_id in ((1, "j1"), (4, "j4")):
            assert run("extract", "--corpus", pipeline["data"] / "corpus.jsonl",
                       "--queries", pipeline["queries"],
                       "--relation-model", pipeline["model"] / "relation.json",
                       "--graphs", pipeline["model"] / "graphs.jsonl",
                       "--jobs", jobs,
                       "--outdir", tmp_path, "--run-id", run_id) == 0
        assert ((tmp_path / "j1" / "results.jsonl").read_bytes()
                == (tmp_path / "j4" / "results.jsonl").read_bytes())

    def test_external_scorer_matches_native(self, pipeline, tmp_path):
        scorer = NativeRelationScorer.load(pipeline["model"] / "relation.json")
        assert run("extract", "--corpus", pipeline["data"] / "corpus.jsonl",
                   "--queries", pipeline["queries"],
                   "--relation-model", pipeline["model"] / "relation.json",
                   "--graphs", pipeline["model"] / "graphs.jsonl",
                   "--outdir", tmp_path, "--run-id", "native") == 0
        with ScorerServer(relation_fn=serve_relation_scorer(scorer)) as server:
            assert run("extract",
                       "--corpus", pipeline["data"] / "corpus.jsonl",
                       "--queries", pipeline["queries"],
                       "--scorer", f"external:{server.address}",
                       "--graphs", pipeline["model"] / "graphs.jsonl",
                       "--outdir", tmp_path, "--run-id", "remote") == 0
        assert ((tmp_path / "native" / "results.jsonl").read_bytes()
                == (tmp_path / "remote" / "results.jsonl").read_bytes())


class TestEval:
    def test_table_and_files(self, pipeline, tmp_path, capsys):
        assert run("eval", "--gold", pipeline["data"] / "gold.jsonl",
                   "--predictions", pipeline["results"],
                   "--corpus", pipeline["data"] / "corpus.jsonl",
                   "--outdir", tmp_path, "--run-id", "scores") == 0
        shown = capsys.readouterr().out
        assert "Subset" in shown and "full" in shown and "hard" in shown
        assert "all-positive" in shown and "two-stage" in shown
        rundir = tmp_path / "scores"
        for name in ("metrics.txt", "metrics.tsv", "metrics.json",
                     "metrics.png"):
            assert (rundir / name).exists(), name
        rows = json.loads((rundir / "metrics.json").read_text())["rows"]
        assert {row["subset"] for row in rows} == {"full", "hard"}

    def test_metrics_files_byte_identical(self, pipeline, tmp_path):
        for run_id in ("a", "b"):
            assert run("eval", "--gold", pipeline["data"] / "gold.jsonl",
                       "--predictions", pipeline["results"],
                       "--corpus", pipeline["data"] / "corpus.jsonl",
                       "--outdir", tmp_path, "--run-id", run_id) == 0
        for name in ("metrics.json", "metrics.tsv", "metrics.txt"):
            assert ((tmp_path / "a" / name).read_bytes()
                    == (tmp_path / "b" / name).read_bytes()), name

    def test_counts_file_reproduces_reference_rows(self, tmp_path, capsys):
        counts = tmp_path / "counts.json"
        counts.write_text(json.dumps({
            "full": {"positives": 1904, "candidates": 17744},
            "hard": {"positives": 332, "candidates": 12122},
        }))
        assert run("eval", "--counts", counts, "--outdir", tmp_path) == 0
        lines = capsys.readouterr().out.splitlines()
        full = next(l for l in lines if l.startswith("full"))
        hard = next(l for l in lines if l.startswith("hard"))
        assert abs(float(full.split()[-1]) - 19.4) <= 0.1
        assert abs(float(full.split()[-3]) - 10.7) <= 0.1
        assert abs(float(hard.split()[-1]) - 5.3) <= 0.1

    def test_multi_seed_reports_mean_and_sd(self, tmp_path, capsys):
        gold = tmp_path / "gold.jsonl"
        rows = [{"doc": f"d{i}", "drug": "a", "gene": "b", "mutation": "c",
                 "label": int(i < 4)} for i in range(8)]
        GoldSet(rows).save(gold)
        tp_by_seed = (4, 3, 2)
        files = []
        for s, tp in enumerate(tp_by_seed):
            path = tmp_path / f"preds{s}.jsonl"
            with path.open("w") as fh:
                for i, row in enumerate(rows):
                    fh.write(json.dumps({**{k: row[k] for k in
                                            ("doc", "drug", "gene",
                                             "mutation")},
                                         "decision": int(i < tp)}) + "\n")
            files.append(path)
        assert run("eval", "--gold", gold, "--predictions", *files,
                   "--outdir", tmp_path, "--run-id", "seeds") == 0
        shown = capsys.readouterr().out
        assert "±" in shown
        rows_out = json.loads(
            (tmp_path / "seeds" / "metrics.json").read_text())["rows"]
        system = next(r for r in rows_out if r["system"] == "two-stage")
        assert system["recall"] == pytest.approx((1.0 + 0.75 + 0.5) / 3)
        assert system["sd"]["precision"] == 0.0
        assert system["runs"] == 3

    def test_nothing_to_do_is_config_error(self, tmp_path):
        assert run("eval", "--outdir", tmp_path) == 1


def toy_corpus(path):
    sents = {
        0: "Vemurafenib , a BRAF inhibitor , entered trials .",
        1: "V600E ( the BRAF variant ) drives tumor growth .",
        2: "Tumors with the BRAF variant responded to the BRAF inhibitor .",
    }
    paragraphs = tuple(
        Paragraph((Sentence(tuple(sents[p].split())),)) for p in range(3)
    )
    spec = [
        ("d0", NAMED, 0, 0, 1, "e0"), ("np0", CANDIDATE_NP, 0, 3, 5, None),
        ("g0", NAMED, 0, 3, 4, "e1"),
        ("m0", NAMED, 1, 0, 1, "e2"), ("np1", CANDIDATE_NP, 1, 2, 5, None),
        ("g1", NAMED, 1, 3, 4, "e1"),
        ("np2", CANDIDATE_NP, 2, 2, 5, None), ("g2", NAMED, 2, 3, 4, "e1"),
        ("np3", CANDIDATE_NP, 2, 8, 10, None), ("g3", NAMED, 2, 8, 9, "e1"),
    ]
    mentions = {m[0]: Mention(id=m[0], kind=m[1], p=m[2], s=0, t0=m[3],
                              t1=m[4], entity=m[5]) for m in spec}
    entities = {
        "e0": Entity(id="e0", type="drug", name="Vemurafenib",
                     mentions=("d0",)),
        "e1": Entity(id="e1", type="gene", name="BRAF",
                     mentions=("g0", "g1", "g2", "g3")),
        "e2": Entity(id="e2", type="mutation", name="V600E",
                     mentions=("m0",)),
    }
    doc = Document(id="toy", paragraphs=paragraphs, entities=entities,
                   mentions=mentions)
    doc.validate()
    save_corpus([doc], path)


def cue_detector(path):
    Ex = namedtuple("Ex", "template label")
    examples = [
        Ex(("[CLS]", "Tumors", "with", "[X3]", "responded", "to", "the",
            "[X1]", "."), 1.0),
        Ex(("[CLS]", "cells", "with", "[X3]", "responded", "to", "[X1]",
            "."), 1.0),
        Ex(("[CLS]", "[X3]", "was", "measured", "alongside", "[X1]", "."),
           0.0),
        Ex(("[CLS]", "[X3]", "and", "[X1]", "were", "unrelated", "."), 0.0),
    ]
    scorer, _ = train_relation_detector(
        examples, TrainConfig(epochs=30, dev_fraction=0.0, seed=3),
        dim=1 << 12)
    scorer.save(path)


@pytest.fixture(scope="module")
def toy(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    toy_corpus(root / "corpus.jsonl")
    cue_detector(root / "relation.json")
    return root


class TestExplain:
    def test_two_chain_report(self, toy, tmp_path, capsys):
        assert run("explain", "--corpus", toy / "corpus.jsonl",
                   "--doc", "toy", "--drug", "Vemurafenib",
                   "--gene", "BRAF", "--mutation", "V600E",
                   "--relation-model", toy / "relation.json",
                   "--outdir", tmp_path, "--run-id", "why") == 0
        shown = capsys.readouterr().out
        assert "decision: positive" in shown
        assert shown.count("via:") >= 2
        assert "-ISA->" in shown
        assert (tmp_path / "why" / "report.txt").read_text().strip() \
            == shown.strip()

    def test_json_report(self, toy, tmp_path, capsys):
        assert run("explain", "--corpus", toy / "corpus.jsonl",
                   "--doc", "toy", "--drug", "Vemurafenib",
                   "--gene", "BRAF", "--mutation", "V600E",
                   "--relation-model", toy / "relation.json", "--json",
                   "--outdir", tmp_path, "--run-id", "why") == 0
        record = json.loads(capsys.readouterr().out)
        assert record["decision"] == 1
        chains = record["evidences"][0]["chains"]
        assert chains["drug"] and chains["mutation"]

    def test_unknown_document_is_runtime_error(self, toy, tmp_path):
        assert run("explain", "--corpus", toy / "corpus.jsonl",
                   "--doc", "ghost", "--drug", "a", "--gene", "b",
                   "--mutation", "c",
                   "--relation-model", toy / "relation.json",
                   "--outdir", tmp_path) == 3


class TestExitCodes:
    def test_missing_input_names_path(self, tmp_path, capsys):
        code = run("gen-ds", "--corpus", tmp_path / "gone.jsonl",
                   "--kb", tmp_path / "alsogone.jsonl", "--outdir", tmp_path)
        assert code == 2
        assert "gone.jsonl" in capsys.readouterr().err

    def test_bad_config_file(self, tmp_path):
        config = tmp_path / "synth.toml"
        config.write_text('num_docs = "many"\n')
        assert run("synth", "--config", config, "--outdir", tmp_path) == 1

    def test_unparseable_toml(self, tmp_path):
        config = tmp_path / "synth.toml"
        config.write_text("num_docs = [unterminated\n")
        assert run("synth", "--config", config, "--outdir", tmp_path) == 1

    def test_bad_scorer_flag(self, pipeline, tmp_path):
        assert run("extract", "--corpus", pipeline["data"] / "corpus.jsonl",
                   "--queries", pipeline["queries"], "--scorer", "psychic",
                   "--outdir", tmp_path) == 1

    def test_bad_flag_is_config_error(self, tmp_path):
        assert run("synth", "--no-such-flag", "--outdir", tmp_path) == 1
