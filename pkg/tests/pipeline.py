"""The file-mediated pipeline on the bundled fixture, with a mock endpoint that echoes gold."""

import json
from pathlib import Path

import httpx

from apakit import cli
from apakit.corpus import read_canonical
from apakit.promptgen import TaskSpec
from apakit.respparse import from_annotation, serialize

FIXTURE = Path(__file__).resolve().parents[1] / "src" / "apakit" / "data" / "fixture"


def echo_gold_transport(corpus_file, task: TaskSpec):
    gold = {a.utterance_id: a for a in read_canonical(corpus_file)}

    def handler(request):
        uid = json.loads(request.content)["utterance_id"]
        return httpx.Response(200, json={"text": serialize(from_annotation(gold[uid], task), task)})

    return httpx.MockTransport(handler)


def run(argv):
    rc = cli.main([str(a) for a in argv])
    if rc != 0:
        raise AssertionError(f"apakit {' '.join(map(str, argv))} exited {rc}")


def smoke(work: Path, task: str = "full") -> Path:
    """ingest -> render-prompts -> infer (mock) -> parse -> score; returns the metrics JSON path."""
    corpus = work / "corpus"
    run(["ingest", "--root", FIXTURE, "--out", corpus])
    run(["render-prompts", "--corpus", corpus / "test.jsonl", "--task", task, "--out", work / "prompts.jsonl"])
    cli.TRANSPORT = echo_gold_transport(corpus / "test.jsonl", TaskSpec.parse(task))
    try:
        run(["infer", "--prompts", work / "prompts.jsonl", "--out", work / "records.jsonl", "--rps", "1000"])
    finally:
        cli.TRANSPORT = None
    run(["parse", "--responses", work / "records.jsonl", "--task", task, "--out", work / "parsed.jsonl"])
    run(["score", "--pred", work / "parsed.jsonl", "--gold", corpus / "test.jsonl", "--task", task,
         "--out", work / "metrics.json"])
    return work / "metrics.json"
