"""End-to-end command-line coverage: exit codes, formats, manifests, replay."""

import hashlib
import json
from pathlib import Path

import pytest

from ergodic.cli import main, replay

SEED_ARGS = ["--seed", "00112233445566778899aabbccddeeff"]


@pytest.fixture(autouse=True)
def _in_tmp(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)


def run(capsys, argv):
    code = main(argv)
    return code, capsys.readouterr().out


def jsonl_rows(text):
    return [json.loads(line) for line in text.splitlines() if line.strip()]


def git_blob(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\x00" % len(data) + data).hexdigest()


def test_sample_jsonl(capsys):
    code, out = run(capsys, ["sample", "--sampler", "maxgraph:d=3", "-n", "5", *SEED_ARGS])
    assert code == 0
    rows = jsonl_rows(out)
    assert rows
    assert all(set(r) == {"symbol", "args"} for r in rows)
    assert all(0 <= a < 5 for r in rows for a in r["args"])


def test_estimate_stdout_and_manifest(capsys):
    code, out = run(
        capsys,
        ["estimate", "--sampler", "kaleidoscope:k=2,d=1", "--phi", "(rel R0 x0 x1)",
         "--trials", "400", *SEED_ARGS],
    )
    assert code == 0
    (row,) = jsonl_rows(out)
    assert abs(row["estimate"] - 0.5) < 5 * row["stderr"] + 1e-9
    doc = json.loads(Path("manifest.json").read_text())
    assert doc["kind"] == "run-manifest"
    assert doc["exit_code"] == 0
    assert doc["outputs"] == {"-": git_blob(out.encode())}


def test_estimate_csv_to_file(capsys):
    code, out = run(
        capsys,
        ["estimate", "--sampler", "maxgraph:d=2", "--phi", "(rel R0 x0 x1)",
         "--trials", "200", "--format", "csv", "--out", "est.csv", *SEED_ARGS],
    )
    assert code == 0 and out == ""
    text = Path("est.csv").read_text()
    assert text.splitlines()[0].count("estimate") == 1
    doc = json.loads(Path("est.csv.manifest.json").read_text())
    assert doc["outputs"]["est.csv"] == git_blob(Path("est.csv").read_bytes())


@pytest.mark.parametrize(
    "argv",
    [
        ["no-such-command"],
        ["sample", "--sampler", "maxgraph:d=3"],  # missing -n
        ["sample", "--sampler", "nonsense:d=3", "-n", "4"],
        ["sample", "--sampler", "maxgraph:d=3", "-n", "4", "--seed", "xyz"],
        ["estimate", "--sampler", "maxgraph:d=2", "--phi", "(rel R9 x0 x1)"],
        ["estimate", "--sampler", "maxgraph:d=2", "--phi", "(rel R0 x0"],
        ["build-limit", "--guide", "bogus", "--stages", "3"],
        ["rescale", "--manifest", "absent.json", "--preset", "p0-heavy"],
    ],
)
def test_usage_errors_exit_3(capsys, argv):
    code = main(argv)
    err = capsys.readouterr().err
    assert code == 3
    assert err.startswith("error:")


def test_collide_flags_bad_expectation(capsys):
    base = ["collide", "--sampler", "kaleidoscope:k=2,d=2", "-n", "2",
            "--trials", "1500", *SEED_ARGS]
    code, out = run(capsys, [*base, "--expect", "0.25"])
    assert code == 0
    code, out = run(capsys, [*base, "--expect", "0.5"])
    assert code == 1
    dev = [r for r in jsonl_rows(out) if r["statistic"] == "deviation"]
    assert dev and abs(dev[0]["z"]) > 3.0


def test_roots_exit_codes(capsys):
    code, _ = run(capsys, ["roots", "--sampler", "maxgraph:d=12", "-n", "16", *SEED_ARGS])
    assert code == 0
    code, out = run(capsys, ["roots", "--sampler", "kaleidoscope:k=2,d=2", "-n", "16", *SEED_ARGS])
    assert code == 2
    assert any(not r["rooted"] for r in jsonl_rows(out))


def test_dissoc_flags_mixture(capsys):
    code, out = run(
        capsys,
        ["dissoc", "--sampler", "mixture:p1=0.1,p2=0.9", "--phi", "(rel R0 x0 x1)",
         "--psi", "(rel R0 x0 x1)", "--trials", "2000", *SEED_ARGS],
    )
    assert code == 1
    code, _ = run(
        capsys,
        ["dissoc", "--sampler", "kaleidoscope:k=2,d=3", "--phi", "(rel R0 x0 x1)",
         "--psi", "(rel R0 x0 x1)", "--trials", "2000", *SEED_ARGS],
    )
    assert code == 0


def test_invariance_symmetric_formula_is_exact(capsys):
    # R0 is symmetric, so swapping the pair changes nothing draw by draw
    code, out = run(
        capsys,
        ["invariance", "--sampler", "geometric:dim=1,norm=sup,p=0.5",
         "--phi", "(rel R0 x0 x1)", "--sigma", "1 0", "--trials", "800", *SEED_ARGS],
    )
    assert code == 0
    (row,) = [r for r in jsonl_rows(out) if r["statistic"] == "gap"]
    assert row["estimate"] == 0.0
    assert row["z"] == 0.0


def test_coherence_and_postypes(capsys):
    code, _ = run(capsys, ["coherence", "--sampler", "bipartite:i=2,j=2", "-n", "4",
                           "-m", "2", "--trials", "40", *SEED_ARGS])
    assert code == 0
    code, out = run(capsys, ["postypes", "--sampler", "blowup:d=2", "--arity", "1",
                             "--trials", "600", *SEED_ARGS])
    assert code == 0
    rows = jsonl_rows(out)
    freqs = [r["frequency"] for r in rows if "frequency" in r]
    (summary,) = [r for r in rows if "covered" in r]
    assert len(freqs) == 3
    assert sum(freqs) == pytest.approx(1.0, abs=1e-12)
    assert summary["covered"] == 1.0


def test_morleyize_single_doc(capsys):
    code, out = run(
        capsys,
        ["morleyize", "--base", "R/2",
         "--sentence", "(forall x (exists y (rel R x y)))", *SEED_ARGS],
    )
    assert code == 0
    doc = json.loads(out)
    assert set(doc) == {"axioms", "base", "qtypes", "table"}
    assert len(doc["axioms"]) == 4
    assert [a["prefix"] for a in doc["axioms"]] == ["AA", "AAE", "AE", ""]
    assert doc["table"][-1]["arity"] == 0


def test_build_limit_sample_rescale_pipeline(capsys):
    code, _ = run(capsys, ["build-limit", "--stages", "5", "--out", "build.json", *SEED_ARGS])
    assert code == 0
    doc = json.loads(Path("build.json").read_text())
    assert len(doc["stage_summaries"]) == 6  # stages 0..5

    code, out = run(capsys, ["limit-sample", "--manifest", "build.json", "-n", "4",
                             "--depth", "10", *SEED_ARGS])
    assert code == 0
    rows = jsonl_rows(out)
    audits = [r for r in rows if "audit" in r]
    assert len(audits) == 3
    assert all(r["passed"] for r in audits)

    code, out = run(capsys, ["rescale", "--manifest", "build.json", "--preset", "p0-heavy",
                             "--trials", "300", *SEED_ARGS])
    assert code == 0
    stats = {r["statistic"] for r in jsonl_rows(out)}
    assert {"marginal-base", "marginal-rescaled", "gap"} <= stats


def test_limit_sample_audit_failure_exits_2(capsys):
    # at depth 5 only a short prefix of the scheduled type is materialized,
    # so the omission/distinctness audits can and do fail for this seed
    run(capsys, ["build-limit", "--stages", "5", "--out", "b5.json", *SEED_ARGS])
    code, out = run(capsys, ["limit-sample", "--manifest", "b5.json", "-n", "4",
                             "--depth", "5", *SEED_ARGS])
    assert code == 2
    assert any(r.get("passed") is False for r in jsonl_rows(out) if "audit" in r)
    code, _ = run(capsys, ["limit-sample", "--manifest", "b5.json", "-n", "4",
                           "--depth", "5", "--no-audit", *SEED_ARGS])
    assert code == 0


@pytest.mark.parametrize(
    "argv,manifest",
    [
        (["estimate", "--sampler", "maxgraph:d=2", "--phi", "(rel R0 x0 x1)",
          "--trials", "150"], "manifest.json"),
        (["build-limit", "--stages", "4", "--out", "rb.json"], "rb.json.manifest.json"),
        (["morleyize", "--base", "P/1", "--sentence", "(exists x (rel P x))"],
         "manifest.json"),
        (["collide", "--sampler", "kaleidoscope:k=2,d=2", "-n", "2", "--trials", "200"],
         "manifest.json"),
    ],
)
def test_replay_reproduces_runs(capsys, argv, manifest):
    main([*argv, *SEED_ARGS])
    capsys.readouterr()
    assert replay(manifest)


def test_replay_pipeline_commands(capsys):
    main(["build-limit", "--stages", "4", "--out", "p.json", *SEED_ARGS])
    main(["limit-sample", "--manifest", "p.json", "-n", "4", "--depth", "4",
          "--trials", "2", "--out", "pts.jsonl", *SEED_ARGS])
    main(["rescale", "--manifest", "p.json", "--preset", "p0-light", "--trials", "200",
          "--out", "resc.jsonl", *SEED_ARGS])
    capsys.readouterr()
    assert replay("pts.jsonl.manifest.json")
    assert replay("resc.jsonl.manifest.json")


def test_replay_detects_tampering(capsys):
    main(["estimate", "--sampler", "maxgraph:d=2", "--phi", "(rel R0 x0 x1)",
          "--trials", "150", "--out", "t.jsonl", *SEED_ARGS])
    capsys.readouterr()
    path = Path("t.jsonl.manifest.json")
    doc = json.loads(path.read_text())
    doc["outputs"]["t.jsonl"] = "0" * 40
    path.write_text(json.dumps(doc))
    assert not replay(path)
