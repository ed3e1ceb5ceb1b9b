"""Smoke test for the `hakf` Python extension.

Builds the extension with cargo (skip with HAKF_NO_BUILD=1), loads it from
target/, and drives the IED scenario end to end.

    python3 python/smoke_test.py [--release]
"""

import importlib.machinery
import importlib.util
import json
import os
import pathlib
import subprocess
import sys

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load_extension(profile):
    if os.environ.get("HAKF_NO_BUILD") != "1":
        cmd = ["cargo", "build", "--offline", "-p", "hakf-py"]
        if profile == "release":
            cmd.append("--release")
        subprocess.run(cmd, cwd=ROOT, check=True)
    lib = ROOT / "target" / profile / "libhakf.so"
    loader = importlib.machinery.ExtensionFileLoader("hakf", str(lib))
    spec = importlib.util.spec_from_file_location("hakf", lib, loader=loader)
    module = importlib.util.module_from_spec(spec)
    loader.exec_module(module)
    return module


def main():
    hakf = load_extension("release" if "--release" in sys.argv else "debug")
    golden = ROOT / "crates" / "core" / "tests" / "golden"
    definition = (golden / "ied.definition.json").read_text()
    rule = next(l for l in (golden / "ied.pl").read_text().splitlines() if not l.startswith("%"))

    assert hakf.compile(definition) == rule
    assert hakf.parse_fragment(rule) == rule

    facts = json.dumps([
        {"probability": 0.9, "label": "explosion", "time": 10, "location": {"x": 0, "y": 0}},
        {"probability": 0.8, "label": "siren", "time": 60, "location": {"x": 100, "y": 0}},
    ])
    assert abs(hakf.evaluate_exact(rule, facts, "ied") - 0.72) < 1e-9

    scenario = hakf.validate_scenario((ROOT / "scenarios" / "ied.scenario.json").read_text())
    events = hakf.generate(scenario)
    assert hakf.generate(scenario) == events
    assert len(events.splitlines()) == 2

    engine = hakf.Engine()
    assert engine.add_definition(definition) == rule
    detections = engine.ingest_jsonl(events).splitlines()
    assert len(detections) == 1
    detection = json.loads(detections[0])
    assert abs(detection["probability"] - 0.72) < 1e-9
    assert (detection["intervalStart"], detection["intervalEnd"]) == (10, 60)
    assert engine.match_brute() == engine.detections_jsonl()

    explanation = json.loads(engine.explain(detection["id"]))
    assert "Δt=50s ≤ 300s" in explanation["narrative"]
    assert [c["actual"] for c in explanation["constraintChecks"]] == [50, 100]

    restored = hakf.Engine.restore(engine.snapshot())
    assert restored.detections_jsonl() == engine.detections_jsonl()

    assert engine.mark_regular("market_mic", "explosion") == 1
    freq = json.loads(engine.frequencies("market_mic", 600))
    assert {row["class"] for row in freq} == {"explosion", "siren"}

    palette = hakf.Palette("ops").add_concept("Sensor", "thing").add_concept("Camera", "Sensor")
    assert palette.is_subconcept("Camera", "Sensor")
    assert hakf.Palette.from_json(palette.to_json()).to_json() == palette.to_json()
    graph = hakf.KnowledgeGraph("demo", palette)
    assert len(graph) == 0
    assert hakf.KnowledgeGraph.from_json(graph.to_json()).to_json() == graph.to_json()

    try:
        hakf.compile("{")
    except hakf.HakfError as e:
        assert "parse error" in str(e)
    else:
        raise AssertionError("malformed definition accepted")
    try:
        engine.ingest(events.splitlines()[0])
    except ValueError as e:
        assert "out-of-order" in str(e)
    else:
        raise AssertionError("replayed event accepted")

    print("python smoke test: ok")


if __name__ == "__main__":
    main()
