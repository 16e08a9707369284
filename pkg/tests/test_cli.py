import numpy as np
import pytest

from dancebeat import pose
from dancebeat.cli import main
from dancebeat.clicktrack import read_wav_header

TINY_CFG = """\
scales = 2
base_period = 2.0
bins = 4
rhythm_dim = 6
hidden_w = 4
hidden_a = 4
joints = 4
duration_s = 2.0
cond_len = 4
cond_dim = 3
latent_len = 10
latent_dim = 3
blocks = 1
hidden = 8
heads = 2
batch_size = 2
epochs = 2
learning_rate = 0.001
steps = 4
"""


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "tiny.cfg"
    p.write_text(TINY_CFG)
    return str(p)


def run(*argv):
    return main(list(argv))


class TestSynth:
    def test_writes_expected_files(self, tmp_path, cfg_file):
        out = tmp_path / "data"
        assert run("--config", cfg_file, "synth", "--out", str(out), "--n-clips", "3") == 0
        for i in range(3):
            for ext in ("pose", "beats", "latent", "cond"):
                assert (out / f"clip_{i:03d}.{ext}").exists()
        assert (out / "manifest.txt").exists()
        assert (out / "run.log").exists()

    def test_manifest_tempi_in_range(self, tmp_path, cfg_file):
        out = tmp_path / "data"
        run("--config", cfg_file, "synth", "--out", str(out), "--n-clips", "5")
        for line in (out / "manifest.txt").read_text().splitlines():
            tempo = float(line.split("tempo=")[1].split()[0])
            assert 60.0 <= tempo <= 180.0

    def test_byte_determinism(self, tmp_path, cfg_file):
        a, b = tmp_path / "a", tmp_path / "b"
        run("--config", cfg_file, "--seed", "4", "synth", "--out", str(a), "--n-clips", "2")
        run("--config", cfg_file, "--seed", "4", "synth", "--out", str(b), "--n-clips", "2")
        for f in sorted(a.iterdir()):
            assert f.read_bytes() == (b / f.name).read_bytes(), f.name

    def test_seed_changes_output(self, tmp_path, cfg_file):
        a, b = tmp_path / "a", tmp_path / "b"
        run("--config", cfg_file, "--seed", "1", "synth", "--out", str(a), "--n-clips", "1")
        run("--config", cfg_file, "--seed", "2", "synth", "--out", str(b), "--n-clips", "1")
        assert (a / "clip_000.pose").read_bytes() != (b / "clip_000.pose").read_bytes()

    def test_refuses_nonempty_without_force(self, tmp_path, cfg_file, capsys):
        out = tmp_path / "data"
        out.mkdir()
        (out / "keep.txt").write_text("x")
        assert run("--config", cfg_file, "synth", "--out", str(out)) == 1
        assert "--force" in capsys.readouterr().err
        assert run("--config", cfg_file, "--force", "synth", "--out", str(out),
                   "--n-clips", "1") == 0


class TestExtractAlign:
    def test_extract_format(self, tmp_path, cfg_file):
        data = tmp_path / "data"
        run("--config", cfg_file, "synth", "--out", str(data), "--n-clips", "1")
        out = tmp_path / "clip.rhythm"
        assert run("--config", cfg_file, "extract", "--pose",
                   str(data / "clip_000.pose"), "--out", str(out)) == 0
        header = out.read_text().splitlines()[0].split()
        assert header[:2] == ["60", "6"]  # duration_s*fps frames, rhythm_dim cols

    def test_align_output_length(self, tmp_path, cfg_file):
        data = tmp_path / "data"
        run("--config", cfg_file, "synth", "--out", str(data), "--n-clips", "1")
        r = tmp_path / "clip.rhythm"
        run("--config", cfg_file, "extract", "--pose", str(data / "clip_000.pose"),
            "--out", str(r))
        out = tmp_path / "clip.arhythm"
        assert run("--config", cfg_file, "align", "--rhythm", str(r),
                   "--out", str(out)) == 0
        header = out.read_text().splitlines()[0].split()
        assert header[:2] == ["10", "6"]  # latent_len rows


class TestTrainGenerateEvaluate:
    @pytest.fixture
    def trained(self, tmp_path, cfg_file):
        data = tmp_path / "data"
        run("--config", cfg_file, "synth", "--out", str(data), "--n-clips", "2")
        ckpt = tmp_path / "model"
        assert run("--config", cfg_file, "train", "--data", str(data),
                   "--out", str(ckpt)) == 0
        return data, ckpt

    def test_generate_deterministic_and_wav(self, tmp_path, cfg_file, trained):
        data, ckpt = trained
        outs = []
        for name in ("g1.latent", "g2.latent"):
            out = tmp_path / name
            assert run("--config", cfg_file, "generate", "--ckpt", str(ckpt),
                       "--pose", str(data / "clip_000.pose"),
                       "--cond", str(data / "clip_000.cond"),
                       "--out", str(out), "--wav", str(out.with_suffix(".wav"))) == 0
            outs.append(out)
        assert outs[0].read_bytes() == outs[1].read_bytes()
        h = read_wav_header(outs[0].with_suffix(".wav"))
        assert h["channels"] == 1 and h["sample_rate"] == 44100
        z = pose.load_latent(outs[0])
        assert z.data.shape == (10, 3)
        assert np.all(np.isfinite(z.data))

    def test_evaluate_ground_truth_self_match(self, tmp_path, cfg_file, trained, capsys):
        data, _ = trained
        # scoring the ground-truth latents against themselves is a perfect match
        assert run("--config", cfg_file, "evaluate", "--data", str(data),
                   "--generated", str(data),
                   "--report", str(tmp_path / "rep.txt")) == 0
        summary = capsys.readouterr().out.splitlines()[-1]
        assert "BCS=100.00" in summary and "F1=100.00" in summary
        assert "CSD=0.00" in summary and "HSD=0.00" in summary
        assert (tmp_path / "rep.txt").exists()
        assert (tmp_path / "rep.tsv").exists()

    def test_evaluate_from_checkpoint_runs(self, tmp_path, cfg_file, trained, capsys):
        data, ckpt = trained
        assert run("--config", cfg_file, "--jobs", "2", "evaluate",
                   "--data", str(data), "--ckpt", str(ckpt)) == 0
        assert "F1=" in capsys.readouterr().out

    def test_evaluate_needs_source(self, tmp_path, cfg_file, trained, capsys):
        data, _ = trained
        assert run("--config", cfg_file, "evaluate", "--data", str(data)) == 1
        assert "error:" in capsys.readouterr().err


class TestTopLevel:
    def test_print_config(self, capsys):
        assert run("--print-config") == 0
        out = capsys.readouterr().out
        assert "seed = 0" in out and "# reference default" in out

    def test_bad_config_file(self, tmp_path, capsys):
        p = tmp_path / "bad.cfg"
        p.write_text("nope = 1\n")
        assert run("--config", str(p), "--print-config") == 1
        assert "unknown config key" in capsys.readouterr().err

    def test_missing_pose_file(self, tmp_path, capsys):
        assert run("extract", "--pose", str(tmp_path / "nope.pose"),
                   "--out", str(tmp_path / "o.rhythm")) == 1
        assert "error:" in capsys.readouterr().err

    def test_no_command_prints_help(self, capsys):
        assert run() == 2
        assert "usage:" in capsys.readouterr().out
