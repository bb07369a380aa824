import json

import pytest

from app.main import run_cli
from app.repositories.report_repository import report_repository
from app.repositories.sequence_repository import load_sequence


def _write_json(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Generated data plus tiny score and transition checkpoints shared by the module."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    gen_cfg = _write_json(root / "gen.json", {"height": 16, "width": 16, "length": 6})
    assert run_cli(["gen", "--config", gen_cfg, "--count", "2", "--seed", "3", "--out", str(data)]) == 0

    score_cfg = _write_json(
        root / "score.json", {"iterations": 2, "batch_size": 4, "denoiser": {"channels": 4, "embedding_dim": 8}}
    )
    assert run_cli(["train-score", str(data), "--config", score_cfg, "--out", str(root / "models")]) == 0

    transition_cfg = _write_json(
        root / "transition.json",
        {"iterations": 2, "batch_size": 2, "tubelet": {"embed_dim": 8, "num_heads": 2, "num_layers": 1}},
    )
    assert run_cli(["train-transition", str(data), "--config", transition_cfg, "--out", str(root / "models")]) == 0
    return root


def test_gen_writes_sequences(workspace):
    files = sorted(p.name for p in (workspace / "data").iterdir())
    assert files == ["seq_000.seqf", "seq_001.seqf"]
    seq = load_sequence(workspace / "data" / "seq_000.seqf")
    assert seq.length == 6 and seq.shape == (16, 16)


def test_training_writes_checkpoints_and_losses(workspace):
    models = workspace / "models"
    assert (models / "denoiser.sdmc").is_file()
    assert (models / "transition.sdmc").is_file()
    lines = (models / "train_score_loss.csv").read_text().splitlines()
    assert lines[0] == "iteration,loss" and len(lines) == 3


def test_run_writes_reconstruction(workspace, tmp_path):
    code = run_cli([
        "run", str(workspace / "data" / "seq_000.seqf"),
        "--score-ckpt", str(workspace / "models" / "denoiser.sdmc"),
        "--strategy", "seqdiffplus",
        "--transition-ckpt", str(workspace / "models" / "transition.sdmc"),
        "--n-prime", "2",
        "--out", str(tmp_path / "run"),
    ])
    assert code == 0
    out = tmp_path / "run"
    rows = report_repository.load(out / "run.csv")
    assert [r.frame for r in rows] == list(range(6))
    assert all(r.n_prime == 2 for r in rows)
    assert load_sequence(out / "reconstruction.seqf").length == 6
    assert (out / "masks.mask").is_file()
    assert len(list((out / "frames").glob("recon_*.pgm"))) == 6


def test_run_exit_codes(workspace, tmp_path):
    seq = str(workspace / "data" / "seq_000.seqf")
    ckpt = str(workspace / "models" / "denoiser.sdmc")
    out = str(tmp_path / "run")
    assert run_cli(["run", seq, "--score-ckpt", str(tmp_path / "missing.sdmc"), "--out", out]) == 2
    assert run_cli(["run", seq, "--score-ckpt", ckpt, "--n-prime", "101", "--out", out]) == 1
    assert run_cli(["run", seq, "--score-ckpt", ckpt, "--no-such-flag", "--out", out]) == 1
    assert run_cli(["run", str(tmp_path / "missing.seqf"), "--score-ckpt", ckpt, "--out", out]) == 2
    assert run_cli(["run", seq, "--score-ckpt", ckpt, "--strategy", "seqdiffplus", "--out", out]) == 1


def test_sweep_and_plot(workspace, tmp_path):
    sweep_cfg = _write_json(tmp_path / "sweep.json", {
        "strategies": ["vanilla", "seqdiff"],
        "n_prime_grid": [1, 2],
        "motion_levels": [1.0],
        "splits": 1,
        "num_sequences": 1,
        "length": 3,
        "height": 16,
        "width": 16,
        "transition": "identity",
        "record_wall_time": False,
    })
    out = tmp_path / "sweep"
    code = run_cli(["sweep", "--score-ckpt", str(workspace / "models" / "denoiser.sdmc"),
                    "--config", sweep_cfg, "--seed", "5", "--out", str(out)])
    assert code == 0
    assert len(report_repository.load(out / "sweep.csv")) == 2 * 2 * 3
    assert (out / "psnr_vs_steps.csv").is_file()

    assert run_cli(["plot", str(out / "sweep.csv"), "--kind", "psnr-vs-steps", "--out", str(tmp_path / "plots")]) == 0
    assert (tmp_path / "plots" / "psnr-vs-steps.svg").read_text().lstrip().startswith("<?xml")


def test_unknown_command_is_a_usage_error():
    assert run_cli(["unknown"]) == 1
