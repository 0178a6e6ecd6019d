"""The command-line interface end to end: every subcommand, the documented
exit codes, config precedence from flags, and byte-stable reruns."""

import shutil
import subprocess
import sys

import numpy as np
import pytest

from taylor_restore.checkpoint import save_checkpoint
from taylor_restore.cli import main
from taylor_restore.composer import ComposerConfig
from taylor_restore.networks import DerivativeSpec, MappingSpec, zero_params
from taylor_restore.trainer import AdamState, make_train_checkpoint

TINY_MODEL_SETS = [
    "--set", "model.mapping_channels=4",
    "--set", "model.mapping_blocks=1",
    "--set", "model.derivative_channels=4",
]


def synthesize(out, count=4, size=16, seed=5, extra=()):
    rc = main(["synthesize", "--out", str(out), "--count", str(count),
               "--seed", str(seed), "--set", f"data.image_size={size}", *extra])
    assert rc == 0
    return out


def train_args(data, out, order=1, epochs=2, patch=8, extra=()):
    return ["train", "--data", str(data), "--out", str(out),
            *TINY_MODEL_SETS,
            "--set", f"composer.order={order}",
            "--set", f"train.epochs={epochs}",
            "--set", f"train.patch_size={patch}",
            "--set", "train.checkpoint_every=0",
            "--seed", "3", *extra]


# --- argument handling ------------------------------------------------------------

def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "synthesize" in capsys.readouterr().out


def test_missing_subcommand_is_usage_error(capsys):
    assert main([]) == 2


def test_unknown_subcommand_is_usage_error(capsys):
    assert main(["frobnicate"]) == 2


def test_bad_orders_spec_is_usage_error(capsys):
    assert main(["sweep-order", "5..1", "--out", "x"]) == 2
    assert main(["sweep-order", "abc", "--out", "x"]) == 2


def test_console_script_is_installed():
    exe = shutil.which("taylor-restore")
    assert exe is not None
    proc = subprocess.run([exe, "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "synthesize" in proc.stdout


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "taylor_restore", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0


# --- synthesize ----------------------------------------------------------------------

def test_synthesize_writes_corpus_and_echo(tmp_path, capsys):
    out = tmp_path / "data"
    synthesize(out, count=3, size=16, seed=5)
    stdout = capsys.readouterr().out
    assert "synthesized 3 samples (kind=rain, seed=5)" in stdout
    assert (out / "manifest.tsv").exists()
    assert (out / "clean_000002.ppm").exists()
    assert (out / "degraded_000002.ppm").exists()
    echo = (out / "config.echo").read_text()
    assert "data.count = 3\n" in echo
    assert "data.seed = 5\n" in echo
    assert "train.seed = 5\n" in echo  # --seed sets both seeds


def test_synthesize_rerun_is_byte_identical(tmp_path):
    a = synthesize(tmp_path / "a", count=3, size=16, seed=9)
    b = synthesize(tmp_path / "b", count=3, size=16, seed=9)
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_synthesize_requires_out(capsys):
    assert main(["synthesize", "--count", "1"]) == 2
    assert "requires --out" in capsys.readouterr().err


def test_synthesize_rejects_zero_count(tmp_path, capsys):
    assert main(["synthesize", "--out", str(tmp_path / "x"), "--count", "0"]) == 2
    assert "data.count" in capsys.readouterr().err


def test_unknown_set_key_is_config_error(tmp_path, capsys):
    rc = main(["synthesize", "--out", str(tmp_path / "x"), "--count", "1",
               "--set", "data.bogus=1"])
    assert rc == 2
    assert "unknown config key" in capsys.readouterr().err


def test_config_file_layers_under_set_flags(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("data.count = 3\ndata.image_size = 16\n")
    out = tmp_path / "data"
    rc = main(["synthesize", "--config", str(cfg), "--out", str(out),
               "--set", "data.count=2", "--seed", "4"])
    assert rc == 0
    manifest = (out / "manifest.tsv").read_text().splitlines()
    assert len(manifest) == 3  # header + 2 rows: --set beat the file value


def test_seed_flag_beats_set_overrides(tmp_path):
    flag = tmp_path / "flag"
    plain = tmp_path / "plain"
    rc = main(["synthesize", "--out", str(flag), "--count", "2",
               "--set", "data.image_size=16", "--set", "data.seed=99",
               "--seed", "7"])
    assert rc == 0
    synthesize(plain, count=2, size=16, seed=7)
    assert (flag / "manifest.tsv").read_bytes() == (plain / "manifest.tsv").read_bytes()


def test_missing_config_file_is_config_error(tmp_path, capsys):
    rc = main(["synthesize", "--config", str(tmp_path / "nope.cfg"),
               "--out", str(tmp_path / "x"), "--count", "1"])
    assert rc == 2
    assert "config file not found" in capsys.readouterr().err


# --- train ------------------------------------------------------------------------------

def test_train_writes_outputs(tmp_path, capsys):
    data = synthesize(tmp_path / "data")
    out = tmp_path / "run"
    rc = main(train_args(data, out))
    assert rc == 0
    assert "trained 2 epochs" in capsys.readouterr().out
    assert (out / "loss.tsv").exists()
    assert (out / "ckpt_epoch0002.bin").exists()
    assert (out / "config.echo").exists()


def test_train_rerun_reproduces_log(tmp_path):
    data = synthesize(tmp_path / "data")
    first = tmp_path / "r1"
    second = tmp_path / "r2"
    assert main(train_args(data, first)) == 0
    assert main(train_args(data, second)) == 0
    assert (first / "loss.tsv").read_bytes() == (second / "loss.tsv").read_bytes()
    assert (first / "ckpt_epoch0002.bin").read_bytes() \
        == (second / "ckpt_epoch0002.bin").read_bytes()


def test_train_requires_data(tmp_path, capsys):
    assert main(["train", "--out", str(tmp_path / "run")]) == 2
    assert "missing paths.data" in capsys.readouterr().err


def test_train_with_missing_corpus_is_io_error(tmp_path, capsys):
    rc = main(train_args(tmp_path / "absent", tmp_path / "run"))
    assert rc == 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_exit_code(tmp_path, capsys):
    data = synthesize(tmp_path / "data", count=8)
    rc = main(train_args(data, tmp_path / "run", order=0, epochs=1,
                         extra=["--set", "train.lr=1e80"]))
    assert rc == 4
    assert "diverged: non-finite loss" in capsys.readouterr().err


def test_train_resume_flag(tmp_path):
    data = synthesize(tmp_path / "data")
    cont = tmp_path / "cont"
    half = tmp_path / "half"
    resumed = tmp_path / "resumed"
    assert main(train_args(data, cont, epochs=4)) == 0
    assert main(train_args(data, half, epochs=2)) == 0
    rc = main(train_args(data, resumed, epochs=4,
                         extra=["--resume", str(half / "ckpt_epoch0002.bin")]))
    assert rc == 0
    assert (resumed / "ckpt_epoch0004.bin").read_bytes() \
        == (cont / "ckpt_epoch0004.bin").read_bytes()


# --- eval --------------------------------------------------------------------------------

def identity_checkpoint(path):
    # an order-0 model with all-zero convolutions: restoration == input
    mapping_spec = MappingSpec(channels=4, blocks=1)
    derivative_spec = DerivativeSpec(in_channels=3, channels=4)
    params = zero_params(mapping_spec)
    ckpt = make_train_checkpoint(params, AdamState.for_params(params), mapping_spec,
                                 derivative_spec, ComposerConfig(order=0),
                                 epoch=0, rng_state=0)
    save_checkpoint(path, ckpt)
    return path


def test_eval_identity_model_on_undegraded_corpus(tmp_path, capsys):
    data = synthesize(tmp_path / "data", count=3, size=24, seed=6,
                      extra=["--set", "data.rain.count_min=0",
                             "--set", "data.rain.count_max=0"])
    ckpt = identity_checkpoint(tmp_path / "identity.bin")
    out = tmp_path / "eval"
    rc = main(["eval", "--ckpt", str(ckpt), "--data", str(data), "--out", str(out)])
    assert rc == 0
    assert "evaluated 3 images: mean psnr inf, mean ssim 1.0" in capsys.readouterr().out
    lines = (out / "metrics.tsv").read_text().splitlines()
    assert lines[0] == "index\tfile\tpsnr\tssim"
    assert lines[1] == "0\tdegraded_000000.ppm\tinf\t1.0"
    assert lines[-1] == "mean\t-\tinf\t1.0"


def test_eval_of_trained_checkpoint(tmp_path, capsys):
    data = synthesize(tmp_path / "data", count=4, size=16)
    run = tmp_path / "run"
    assert main(train_args(data, run)) == 0
    out = tmp_path / "eval"
    rc = main(["eval", "--ckpt", str(run / "ckpt_epoch0002.bin"),
               "--data", str(data), "--out", str(out)])
    assert rc == 0
    lines = (out / "metrics.tsv").read_text().splitlines()
    assert len(lines) == 6  # header + 4 rows + mean
    footer = lines[-1].split("\t")
    assert footer[0] == "mean"
    float(footer[2]), float(footer[3])  # parseable numbers


def test_eval_requires_checkpoint(tmp_path, capsys):
    assert main(["eval", "--data", "d", "--out", str(tmp_path / "x")]) == 2
    assert "missing paths.ckpt" in capsys.readouterr().err


def test_eval_missing_checkpoint_file_is_io_error(tmp_path, capsys):
    data = synthesize(tmp_path / "data", count=1)
    rc = main(["eval", "--ckpt", str(tmp_path / "nope.bin"), "--data", str(data),
               "--out", str(tmp_path / "eval")])
    assert rc == 3


def test_eval_corrupt_checkpoint_is_io_error(tmp_path, capsys):
    data = synthesize(tmp_path / "data", count=1)
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"definitely not a checkpoint")
    rc = main(["eval", "--ckpt", str(bad), "--data", str(data),
               "--out", str(tmp_path / "eval")])
    assert rc == 3
    assert "data error" in capsys.readouterr().err


# --- gradcheck ----------------------------------------------------------------------------

def test_gradcheck_command_passes(tmp_path, capsys):
    rc = main(["gradcheck", "--out", str(tmp_path / "gc")])
    assert rc == 0
    out = capsys.readouterr().out
    assert "gradcheck PASS" in out
    assert "op conv2d" in out
    assert "composed order-3 with_k_residual" in out
    assert "composed order-3 concat_only" in out
    assert (tmp_path / "gc" / "config.echo").exists()


# --- sweep-order --------------------------------------------------------------------------

def sweep_sets(extra=()):
    return [*TINY_MODEL_SETS,
            "--set", "train.epochs=2",
            "--set", "train.patch_size=12",
            "--set", "train.checkpoint_every=0",
            *extra]


def test_sweep_runs_each_order(tmp_path, capsys):
    data = synthesize(tmp_path / "data", count=4, size=24, seed=8)
    out = tmp_path / "sweep"
    rc = main(["sweep-order", "0..2", "--data", str(data), "--out", str(out),
               "--seed", "3", *sweep_sets()])
    assert rc == 0
    lines = (out / "sweep.tsv").read_text().splitlines()
    assert lines[0] == "order\tpsnr\tssim"
    assert len(lines) == 4
    for order, line in enumerate(lines[1:]):
        fields = line.split("\t")
        assert fields[0] == str(order)
        float(fields[1]), float(fields[2])
        run_dir = out / f"order_{order}"
        assert (run_dir / "loss.tsv").exists()
        assert (run_dir / "metrics.tsv").exists()
        # the sweep row repeats the per-order metrics footer verbatim
        footer = (run_dir / "metrics.tsv").read_text().splitlines()[-1].split("\t")
        assert fields[1] == footer[2] and fields[2] == footer[3]


def test_sweep_parallel_jobs_match_serial(tmp_path):
    data = synthesize(tmp_path / "data", count=4, size=24, seed=8)
    serial = tmp_path / "serial"
    parallel = tmp_path / "parallel"
    args = ["0..1", "--data", str(data), "--seed", "3", *sweep_sets()]
    assert main(["sweep-order", *args, "--out", str(serial)]) == 0
    assert main(["sweep-order", *args, "--out", str(parallel), "--jobs", "2"]) == 0
    assert (serial / "sweep.tsv").read_bytes() == (parallel / "sweep.tsv").read_bytes()
    for order in (0, 1):
        assert (serial / f"order_{order}" / "loss.tsv").read_bytes() \
            == (parallel / f"order_{order}" / "loss.tsv").read_bytes()


def test_sweep_marks_failed_orders(tmp_path, capsys):
    data = synthesize(tmp_path / "data", count=4, size=24, seed=8)
    out = tmp_path / "sweep"
    rc = main(["sweep-order", "0,9", "--data", str(data), "--out", str(out),
               "--seed", "3", *sweep_sets()])
    assert rc == 1
    lines = (out / "sweep.tsv").read_text().splitlines()
    assert lines[1].split("\t")[0] == "0"
    assert lines[2] == "9\tFAILED\tFAILED"
    captured = capsys.readouterr()
    assert "order 9 FAILED" in captured.err
