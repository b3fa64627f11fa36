"""End-to-end command-line behaviour: generation, training, evaluation,
decoding, exit codes, and run-to-run reproducibility."""
import numpy as np
import pytest

from seqctc import read_pgm, report_from_lines, write_pgm
from seqctc.cli import main

TINY_NET = """
[network]
input_height = 16
input_width = 32
scale = 0.125
"""


def write_config(tmp_path, body, name="run.cfg"):
    path = tmp_path / name
    path.write_text(body, encoding="utf-8")
    return str(path)


def full_config(tmp_path, seed=1234, epochs=2, extra=""):
    return write_config(
        tmp_path,
        f"""
[run]
seed = {seed}
{TINY_NET}
[gen]
out_dir = {tmp_path}/data
lengths = 1-2
train_per_length = 4
test_per_length = 2
[optimizer]
batch_size = 4
epochs = {epochs}
[train]
checkpoint_dir = {tmp_path}/ckpt
log_file = {tmp_path}/train.log
{extra}
""",
        name=f"run_{seed}_{epochs}.cfg",
    )


class TestGen:
    def test_creates_both_splits(self, tmp_path, capsys):
        cfg = full_config(tmp_path)
        assert main(["gen", "--config", cfg]) == 0
        out = capsys.readouterr().out
        assert "train: 8 samples" in out
        assert "test: 4 samples" in out
        assert (tmp_path / "data/train/manifest.tsv").is_file()
        assert (tmp_path / "data/test/manifest.tsv").is_file()

    def test_splits_use_distinct_streams(self, tmp_path):
        cfg = full_config(tmp_path)
        main(["gen", "--config", cfg])
        train0 = read_pgm(tmp_path / "data/train/images/000000.pgm")
        test0 = read_pgm(tmp_path / "data/test/images/000000.pgm")
        assert not np.array_equal(train0, test0)

    def test_missing_gen_section_fails(self, tmp_path):
        cfg = write_config(tmp_path, "[run]\nseed = 1\n")
        assert main(["gen", "--config", cfg]) == 2


class TestTrain:
    def test_writes_log_and_checkpoints(self, tmp_path):
        cfg = full_config(tmp_path)
        main(["gen", "--config", cfg])
        assert main(["train", "--config", cfg]) == 0
        log_lines = (tmp_path / "train.log").read_text().splitlines()
        assert len(log_lines) == 2
        assert log_lines[0].startswith("epoch=001 mean_loss=")
        assert "wall" not in log_lines[0]  # timing never lands in the log file
        assert (tmp_path / "ckpt/epoch_001.sctc").is_file()
        assert (tmp_path / "ckpt/epoch_002.sctc").is_file()

    def test_reruns_are_byte_identical(self, tmp_path):
        (tmp_path / "a").mkdir()
        (tmp_path / "b").mkdir()
        cfg_a = full_config(tmp_path / "a")
        cfg_b = full_config(tmp_path / "b")
        for cfg in (cfg_a, cfg_b):
            main(["gen", "--config", cfg])
            assert main(["train", "--config", cfg]) == 0
        log_a = (tmp_path / "a/train.log").read_bytes()
        log_b = (tmp_path / "b/train.log").read_bytes()
        assert log_a == log_b
        ck_a = (tmp_path / "a/ckpt/epoch_002.sctc").read_bytes()
        ck_b = (tmp_path / "b/ckpt/epoch_002.sctc").read_bytes()
        assert ck_a == ck_b

    def test_resume_matches_uninterrupted_run(self, tmp_path):
        (tmp_path / "full").mkdir()
        (tmp_path / "split").mkdir()
        cfg_full = full_config(tmp_path / "full", epochs=2)
        main(["gen", "--config", cfg_full])
        main(["train", "--config", cfg_full])

        cfg_one = full_config(tmp_path / "split", epochs=1)
        main(["gen", "--config", cfg_one])
        main(["train", "--config", cfg_one])
        cfg_two = full_config(tmp_path / "split", epochs=2)
        resume_from = str(tmp_path / "split/ckpt/epoch_001.sctc")
        assert main(["train", "--config", cfg_two, "--resume", resume_from]) == 0

        assert (
            (tmp_path / "full/train.log").read_bytes()
            == (tmp_path / "split/train.log").read_bytes()
        )
        assert (
            (tmp_path / "full/ckpt/epoch_002.sctc").read_bytes()
            == (tmp_path / "split/ckpt/epoch_002.sctc").read_bytes()
        )

    def test_resume_rejects_other_topology(self, tmp_path):
        cfg = full_config(tmp_path)
        main(["gen", "--config", cfg])
        main(["train", "--config", cfg])
        other = write_config(
            tmp_path,
            f"""
[run]
seed = 1234
[network]
input_height = 16
input_width = 32
scale = 0.25
[data]
train_manifest = {tmp_path}/data/train/manifest.tsv
""",
            name="other.cfg",
        )
        code = main(
            ["train", "--config", other, "--resume", str(tmp_path / "ckpt/epoch_001.sctc")]
        )
        assert code == 2

    def test_infeasible_labels_fail_with_internal_code(self, tmp_path):
        # four frames can never fit a five-symbol label
        write_pgm(tmp_path / "img.pgm", np.zeros((16, 32), dtype=np.uint8))
        (tmp_path / "m.tsv").write_text("img.pgm\t12345\n")
        cfg = write_config(
            tmp_path,
            f"""
[run]
seed = 5
{TINY_NET}
[data]
train_manifest = {tmp_path}/m.tsv
[optimizer]
epochs = 1
""",
        )
        assert main(["train", "--config", cfg]) == 1


@pytest.fixture
def trained(tmp_path):
    cfg = full_config(tmp_path)
    main(["gen", "--config", cfg])
    main(["train", "--config", cfg])
    return cfg, tmp_path, str(tmp_path / "ckpt/epoch_002.sctc")


class TestEval:
    def test_prints_table_and_writes_report(self, trained, capsys):
        cfg, tmp_path, ckpt = trained
        report_path = tmp_path / "report.kv"
        code = main(
            ["eval", "--config", cfg, "--checkpoint", ckpt, "--report", str(report_path)]
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "all" in out
        report = report_from_lines(report_path.read_text().splitlines())
        assert report.total == 4
        assert 0.0 <= report.rate <= 1.0

    def test_beam_decoder_flag(self, trained, capsys):
        cfg, _, ckpt = trained
        code = main(
            ["eval", "--config", cfg, "--checkpoint", ckpt, "--decoder", "beam", "--beam-width", "4"]
        )
        assert code == 0
        assert "all" in capsys.readouterr().out

    def test_width_one_beam_equals_greedy_report(self, trained, tmp_path, capsys):
        cfg, _, ckpt = trained
        a, b = tmp_path / "greedy.kv", tmp_path / "beam1.kv"
        main(["eval", "--config", cfg, "--checkpoint", ckpt, "--decoder", "greedy", "--report", str(a)])
        main(
            [
                "eval", "--config", cfg, "--checkpoint", ckpt,
                "--decoder", "beam", "--beam-width", "1", "--report", str(b),
            ]
        )
        capsys.readouterr()
        assert a.read_bytes() == b.read_bytes()

    def test_empty_manifest_rejected(self, trained, tmp_path):
        cfg, _, ckpt = trained
        empty = tmp_path / "empty.tsv"
        empty.write_text("")
        assert main(["eval", "--config", cfg, "--checkpoint", ckpt, "--manifest", str(empty)]) == 2

    def test_checkpoint_topology_must_match_config(self, trained, tmp_path):
        cfg, base, ckpt = trained
        other = write_config(
            tmp_path,
            f"""
[run]
seed = 1234
[network]
input_height = 16
input_width = 32
scale = 0.25
[data]
test_manifest = {base}/data/test/manifest.tsv
""",
            name="mismatch.cfg",
        )
        assert main(["eval", "--config", other, "--checkpoint", ckpt]) == 2

    def test_missing_checkpoint_flag(self, trained):
        cfg, _, _ = trained
        assert main(["eval", "--config", cfg]) == 2


class TestDecode:
    def test_single_image_prints_string_and_score(self, trained, capsys):
        _, tmp_path, ckpt = trained
        image = str(tmp_path / "data/test/images/000000.pgm")
        code = main(["decode", "--checkpoint", ckpt, "--image", image])
        assert code == 0
        line = capsys.readouterr().out.splitlines()[0]
        text, score = line.split("\t")
        # a lightly trained network may transcribe nothing at all
        assert all(c in "0123456789" for c in text)
        assert float(score) <= 0.0

    def test_emitted_posteriors_are_row_stochastic(self, trained, capsys):
        _, tmp_path, ckpt = trained
        image = str(tmp_path / "data/test/images/000000.pgm")
        post_path = tmp_path / "post.txt"
        code = main(
            ["decode", "--checkpoint", ckpt, "--image", image, "--emit-posteriors", str(post_path)]
        )
        assert code == 0
        capsys.readouterr()
        rows = [
            [float(v) for v in line.split(" ")]
            for line in post_path.read_text().splitlines()
        ]
        matrix = np.array(rows)
        assert matrix.shape == (4, 11)  # four frames, ten digits plus blank
        np.testing.assert_allclose(matrix.sum(axis=1), 1.0, atol=1e-12)

    def test_manifest_decoding_lists_every_record(self, trained, capsys):
        _, tmp_path, ckpt = trained
        manifest = str(tmp_path / "data/test/manifest.tsv")
        code = main(["decode", "--checkpoint", ckpt, "--manifest", manifest])
        assert code == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 4
        assert all(line.count("\t") == 2 for line in lines)

    def test_non_image_file_rejected(self, trained, tmp_path):
        _, _, ckpt = trained
        bogus = tmp_path / "not_an_image.pgm"
        bogus.write_text("plain text")
        assert main(["decode", "--checkpoint", ckpt, "--image", str(bogus)]) == 2

    def test_image_and_manifest_are_exclusive(self, trained):
        _, tmp_path, ckpt = trained
        assert main(["decode", "--checkpoint", ckpt]) == 2
        assert (
            main(
                [
                    "decode",
                    "--checkpoint",
                    ckpt,
                    "--image",
                    "x.pgm",
                    "--manifest",
                    "m.tsv",
                ]
            )
            == 2
        )


class TestExitCodes:
    def test_missing_config_file(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "nope.cfg")]) == 2

    def test_invalid_config_content(self, tmp_path):
        cfg = write_config(tmp_path, "[run]\nseed = banana\n")
        assert main(["train", "--config", cfg]) == 2

    def test_bad_log_level(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SEQCTC_LOG", "chatty")
        cfg = write_config(tmp_path, "[run]\nseed = 1\n")
        assert main(["gen", "--config", cfg]) == 2

    def test_bad_verb_exits_two(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2
        capsys.readouterr()
