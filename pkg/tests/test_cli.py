import json
from pathlib import Path

import pytest

from memqa.cli import run


def read_jsonl(path):
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """synth-data + prepare + a short train, shared across CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    raw = root / "raw.jsonl"
    prepared = root / "prepared"
    assert run(["synth-data", "--seed", "3", "--n", "8", "--k", "3",
                "--vocab-size", "48", "--out", str(raw)]) == 0
    assert run(["prepare", "--input", str(raw), "--out-dir", str(prepared),
                "--vocab-size", "48", "--n-q", "6", "--n-r", "14", "--n-a", "4",
                "--k", "3"]) == 0
    ckpt = root / "model.ckpt"
    assert run(["train", "--data", str(prepared / "records.jsonl"),
                "--vocab", str(prepared / "vocab.txt"), "--out", str(ckpt),
                "--metrics", str(root / "metrics.csv"),
                "--d", "16", "--blocks", "1", "--heads", "2", "--ff-size", "32",
                "--n-q", "6", "--n-r", "14", "--n-a", "4", "--k", "3",
                "--total-steps", "8", "--peak-lr", "1e-3", "--seed", "1"]) == 0
    return root, raw, prepared, ckpt


class TestSynthData:
    def test_deterministic_bytes(self, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        for out in (a, b):
            assert run(["synth-data", "--seed", "7", "--n", "32", "--out", str(out)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_seed_changes_bytes(self, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        assert run(["synth-data", "--seed", "7", "--n", "8", "--out", str(a)]) == 0
        assert run(["synth-data", "--seed", "8", "--n", "8", "--out", str(b)]) == 0
        assert a.read_bytes() != b.read_bytes()


class TestPrepare:
    def test_outputs_exist(self, workspace):
        _, _, prepared, _ = workspace
        for name in ("records.jsonl", "vocab.txt", "gold.jsonl", "rejected.jsonl"):
            assert (prepared / name).exists()
        assert len(read_jsonl(prepared / "records.jsonl")) == 8

    def test_missing_input_exit_code_3(self, tmp_path, capsys):
        code = run(["prepare", "--input", str(tmp_path / "nope.jsonl"),
                    "--out-dir", str(tmp_path / "o")])
        assert code == 3
        assert "error code=missing_file" in capsys.readouterr().err

    def test_malformed_input_exit_code_5(self, tmp_path, capsys):
        bad = tmp_path / "bad.jsonl"
        bad.write_text("this is not json\n")
        code = run(["prepare", "--input", str(bad), "--out-dir", str(tmp_path / "o")])
        assert code == 5
        assert "error code=parse_error" in capsys.readouterr().err


class TestTrainCli:
    def test_metrics_csv_written(self, workspace):
        root, *_ = workspace
        lines = (root / "metrics.csv").read_text().splitlines()
        assert lines[0] == "step,lr,loss,grad_norm"
        assert len(lines) == 9

    def test_variant_recorded_in_checkpoint(self, workspace, tmp_path):
        _, _, prepared, _ = workspace
        out = tmp_path / "ablated.ckpt"
        assert run(["train", "--data", str(prepared / "records.jsonl"),
                    "--vocab", str(prepared / "vocab.txt"), "--out", str(out),
                    "--variant", "chime_c",
                    "--d", "16", "--blocks", "1", "--heads", "2", "--ff-size", "32",
                    "--n-q", "6", "--n-r", "14", "--n-a", "4", "--k", "3",
                    "--total-steps", "2", "--seed", "1"]) == 0
        from memqa.trainer import load_checkpoint

        ckpt = load_checkpoint(out)
        assert ckpt.config.variant == "chime_c"
        assert not any(k.startswith("mem.ctx") for k in ckpt.model.params)

    def test_config_file_with_cli_override(self, workspace, tmp_path):
        _, _, prepared, _ = workspace
        cfg_file = tmp_path / "config.json"
        cfg_file.write_text(json.dumps({
            "vocab_size": 48, "d": 16, "blocks": 1, "heads": 2, "ff_size": 32,
            "n_q": 6, "n_r": 14, "n_a": 4, "k_passages": 3,
            "total_steps": 2, "seed": 9, "peak_lr": 0.001}))
        out = tmp_path / "m.ckpt"
        assert run(["train", "--data", str(prepared / "records.jsonl"),
                    "--vocab", str(prepared / "vocab.txt"), "--out", str(out),
                    "--config", str(cfg_file), "--seed", "5"]) == 0
        from memqa.trainer import load_checkpoint

        ckpt = load_checkpoint(out)
        assert ckpt.config.seed == 5          # command line wins
        assert ckpt.config.total_steps == 2   # file fills the rest

    def test_unknown_flag_exit_code_2(self):
        with pytest.raises(SystemExit) as exc:
            run(["train", "--no-such-flag"])
        assert exc.value.code == 2


class TestGenerateEvaluate:
    def test_greedy_and_beam_outputs(self, workspace, tmp_path):
        root, _, prepared, ckpt = workspace
        for flags, name in (((["--greedy"]), "greedy.jsonl"), ([], "beam.jsonl")):
            out = tmp_path / name
            assert run(["generate", "--checkpoint", str(ckpt),
                        "--vocab", str(prepared / "vocab.txt"),
                        "--data", str(prepared / "records.jsonl"),
                        "--out", str(out), *flags]) == 0
            rows = read_jsonl(out)
            assert len(rows) == 8
            assert all("generated_text" in r and "question_id" in r for r in rows)
        beam_rows = read_jsonl(tmp_path / "beam.jsonl")
        assert all(len(r["beam_scores"]) >= 1 for r in beam_rows)
        assert all(r["beam_scores"] == sorted(r["beam_scores"], reverse=True)
                   for r in beam_rows)

    def test_generate_deterministic(self, workspace, tmp_path):
        _, _, prepared, ckpt = workspace
        outs = []
        for name in ("g1.jsonl", "g2.jsonl"):
            out = tmp_path / name
            assert run(["generate", "--checkpoint", str(ckpt),
                        "--vocab", str(prepared / "vocab.txt"),
                        "--data", str(prepared / "records.jsonl"),
                        "--out", str(out), "--greedy"]) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_workers_flag_matches_serial(self, workspace, tmp_path):
        _, _, prepared, ckpt = workspace
        serial, parallel = tmp_path / "s.jsonl", tmp_path / "p.jsonl"
        base = ["generate", "--checkpoint", str(ckpt),
                "--vocab", str(prepared / "vocab.txt"),
                "--data", str(prepared / "records.jsonl"), "--greedy"]
        assert run([*base, "--out", str(serial)]) == 0
        assert run([*base, "--out", str(parallel), "--workers", "2"]) == 0
        assert serial.read_bytes() == parallel.read_bytes()

    def test_trace_emits_per_passage_breakdown(self, workspace, tmp_path):
        _, _, prepared, ckpt = workspace
        out = tmp_path / "traced.jsonl"
        assert run(["generate", "--checkpoint", str(ckpt),
                    "--vocab", str(prepared / "vocab.txt"),
                    "--data", str(prepared / "records.jsonl"),
                    "--out", str(out), "--greedy", "--trace"]) == 0
        rows = read_jsonl(out)
        for row in rows:
            assert [t["k"] for t in row["trace"]] == [1, 2, 3]
            assert all("intermediate_answer" in t for t in row["trace"])
            assert row["trace"][1]["mean_gate_context"] is not None

    def test_evaluate_report(self, workspace, tmp_path, capsys):
        _, _, prepared, ckpt = workspace
        preds = tmp_path / "preds.jsonl"
        assert run(["generate", "--checkpoint", str(ckpt),
                    "--vocab", str(prepared / "vocab.txt"),
                    "--data", str(prepared / "records.jsonl"),
                    "--out", str(preds), "--greedy"]) == 0
        report = tmp_path / "report.csv"
        code = run(["evaluate", "--predictions", str(preds),
                    "--gold", str(prepared / "gold.jsonl"), "--out", str(report)])
        assert code == 0
        out = capsys.readouterr().out
        assert "bleu_1" in out and "rouge_l_f1" in out
        body = report.read_text()
        assert "metric,mean" in body

    def test_evaluate_empty_predictions_fails(self, workspace, tmp_path, capsys):
        _, _, prepared, _ = workspace
        empty = tmp_path / "empty.jsonl"
        empty.write_text("")
        code = run(["evaluate", "--predictions", str(empty),
                    "--gold", str(prepared / "gold.jsonl")])
        assert code == 1
        assert "error code=invalid_input" in capsys.readouterr().err

    def test_checkpoint_vocab_mismatch_exit_code_4(self, workspace, tmp_path, capsys):
        _, _, prepared, ckpt = workspace
        small_vocab = tmp_path / "tiny_vocab.txt"
        small_vocab.write_text("[PAD]\t0\n[CLS]\t1\n[SEP]\t2\n[UNK]\t3\n")
        code = run(["generate", "--checkpoint", str(ckpt), "--vocab", str(small_vocab),
                    "--data", str(prepared / "records.jsonl"),
                    "--out", str(tmp_path / "x.jsonl")])
        assert code == 4
        assert "error code=checkpoint_mismatch" in capsys.readouterr().err


class TestBaselineCli:
    def test_random_baseline(self, workspace, tmp_path):
        _, raw, _, _ = workspace
        out = tmp_path / "rand.jsonl"
        assert run(["baseline", "--kind", "random", "--input", str(raw),
                    "--out", str(out), "--seed", "5"]) == 0
        rows = read_jsonl(out)
        assert len(rows) == 8
        assert all(r["generated_text"] for r in rows)

    def test_random_baseline_seeded_deterministic(self, workspace, tmp_path):
        _, raw, _, _ = workspace
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        for out in (a, b):
            assert run(["baseline", "--kind", "random", "--input", str(raw),
                        "--out", str(out), "--seed", "5"]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_retrieval_with_checkpoint_embedder(self, workspace, tmp_path):
        _, raw, prepared, ckpt = workspace
        out = tmp_path / "retr.jsonl"
        assert run(["baseline", "--kind", "retrieval", "--input", str(raw),
                    "--checkpoint", str(ckpt), "--vocab", str(prepared / "vocab.txt"),
                    "--out", str(out)]) == 0
        assert len(read_jsonl(out)) == 8

    def test_retrieval_without_embedder_source_fails(self, workspace, tmp_path, capsys):
        _, raw, _, _ = workspace
        code = run(["baseline", "--kind", "retrieval", "--input", str(raw),
                    "--out", str(tmp_path / "x.jsonl")])
        assert code == 1
        assert "error code=invalid_input" in capsys.readouterr().err
