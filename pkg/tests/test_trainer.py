"""Training loop: exact step-decay schedule, Adam update semantics, patch
sampling, divergence handling, and bit-identical resume."""

import math

import numpy as np
import pytest

from conftest import write_rain_corpus
from taylor_restore.autodiff import Graph, Tensor, backward, l1_loss
from taylor_restore.composer import ComposerConfig, compose_orders, framework_loss_terms
from taylor_restore.errors import ConfigError, DivergenceError, FormatError
from taylor_restore.networks import (
    DerivativeSpec,
    MappingSpec,
    forward_mapping,
    init_params,
)
from taylor_restore.ppm import write_ppm
from taylor_restore.prng import SplitMix64, derive_stream
from taylor_restore.trainer import (
    LOSS_LOG_HEADER,
    STREAM_DATA,
    STREAM_INIT_MAPPING,
    AdamState,
    Corpus,
    CorpusImage,
    TrainConfig,
    adam_step,
    build_params,
    load_corpus,
    lr_at,
    sample_patch_batch,
    train,
)

TINY_MAPPING = MappingSpec(channels=4, blocks=1)
TINY_DERIVATIVE = DerivativeSpec(in_channels=3, channels=4)


def tiny_train_cfg(**kwargs):
    defaults = dict(patch_size=8, batch_size=4, epochs=2, checkpoint_every=0, seed=3)
    defaults.update(kwargs)
    return TrainConfig(**defaults)


# --- learning-rate schedule -----------------------------------------------------

def test_decay_ladder_hits_exact_doubles():
    cfg = TrainConfig()
    assert lr_at(0, cfg) == 1e-3
    assert lr_at(29, cfg) == 1e-3
    assert lr_at(30, cfg) == 2e-4
    assert lr_at(49, cfg) == 2e-4
    assert lr_at(50, cfg) == 4e-5
    assert lr_at(80, cfg) == 8e-6
    assert lr_at(500, cfg) == 8e-6


def test_halving_ladder_is_exact():
    cfg = TrainConfig(lr0=1.0, decay_epochs=(1, 2, 3, 4), decay_factor=0.5)
    assert [lr_at(e, cfg) for e in range(5)] == [1.0, 0.5, 0.25, 0.125, 0.0625]


def test_empty_decay_schedule_is_constant():
    cfg = TrainConfig(decay_epochs=())
    assert lr_at(0, cfg) == lr_at(99, cfg) == 1e-3


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(patch_size=0)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0)
    with pytest.raises(ConfigError):
        TrainConfig(lr0=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(decay_factor=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(decay_epochs=(10, 10))
    with pytest.raises(ConfigError):
        TrainConfig(checkpoint_every=-1)


# --- Adam -------------------------------------------------------------------------

def make_param_set(values):
    from taylor_restore.networks import ParamSet
    params = ParamSet()
    for name, value in values.items():
        params.add(name, Tensor(np.asarray(value, dtype=np.float64)))
    return params


def test_first_step_moves_by_almost_lr():
    params = make_param_set({"w": [1.0]})
    params["w"].grad = np.array([1.0])
    state = AdamState.for_params(params)
    adam_step(params, state, lr=0.1)
    # bias correction makes m-hat = v-hat = 1, so the move is lr/(1 + eps)
    moved = 1.0 - float(params["w"].data[0])
    assert moved == pytest.approx(0.1, rel=1e-7)
    assert moved < 0.1  # eps keeps it strictly below lr
    assert state.t == 1


def test_zero_gradient_leaves_parameter_bits_alone():
    params = make_param_set({"w": [0.75, -0.25]})
    before = params["w"].data.tobytes()
    params["w"].grad = np.zeros(2)
    state = AdamState.for_params(params)
    adam_step(params, state, lr=0.1)
    assert params["w"].data.tobytes() == before


def test_missing_gradient_is_an_error():
    params = make_param_set({"w": [1.0], "b": [2.0]})
    params["w"].grad = np.array([1.0])
    state = AdamState.for_params(params)
    with pytest.raises(ValueError, match="'b' has no gradient"):
        adam_step(params, state, lr=0.1)
    assert state.t == 1  # the counter ticks once per call


def test_identical_steps_are_bit_identical():
    def run():
        params = make_param_set({"w": np.linspace(-1, 1, 7)})
        params["w"].grad = np.linspace(0.5, -0.5, 7)
        state = AdamState.for_params(params)
        adam_step(params, state, lr=0.01)
        adam_step(params, state, lr=0.01)
        return params["w"].data.tobytes(), state.m["w"].tobytes(), state.v["w"].tobytes()

    assert run() == run()


# --- patch sampling ------------------------------------------------------------------

def ramp_corpus(count=1, size=8):
    images = []
    for i in range(count):
        base = np.arange(3 * size * size, dtype=np.float64).reshape(3, size, size)
        base = (base + i) / (3 * size * size + count)
        images.append(CorpusImage(clean=base, degraded=base.copy(), file=f"img{i}"))
    return Corpus(images=images)


def test_patch_equal_to_image_returns_whole_image():
    corpus = ramp_corpus(count=1, size=8)
    degraded, clean = sample_patch_batch(corpus, 8, 2, SplitMix64(1))
    assert degraded.shape == (2, 3, 8, 8)
    assert np.array_equal(degraded.data[0], corpus.images[0].degraded)
    assert np.array_equal(clean.data[1], corpus.images[0].clean)


def test_patches_are_colocated():
    corpus = ramp_corpus(count=3, size=8)
    degraded, clean = sample_patch_batch(corpus, 3, 16, SplitMix64(2))
    assert np.array_equal(degraded.data, clean.data)  # clean == degraded per image


def test_draw_order_is_index_top_left():
    corpus = ramp_corpus(count=5, size=9)
    patch = 4
    rng = SplitMix64(7)
    degraded, _ = sample_patch_batch(corpus, patch, 6, rng)

    ref = SplitMix64(7)
    for slot in range(6):
        idx = ref.randint(5)
        top = ref.randint(9 - patch + 1)
        left = ref.randint(9 - patch + 1)
        expected = corpus.images[idx].degraded[:, top:top + patch, left:left + patch]
        assert np.array_equal(degraded.data[slot], expected)


def test_sampling_is_deterministic():
    corpus = ramp_corpus(count=4, size=8)
    a, _ = sample_patch_batch(corpus, 5, 8, SplitMix64(3))
    b, _ = sample_patch_batch(corpus, 5, 8, SplitMix64(3))
    assert a.data.tobytes() == b.data.tobytes()


def test_too_small_image_names_the_file():
    corpus = ramp_corpus(count=1, size=8)
    with pytest.raises(ValueError, match="img0 is 8x8, smaller than patch size 9"):
        sample_patch_batch(corpus, 9, 1, SplitMix64(1))


# --- corpus loading -------------------------------------------------------------------

def test_load_corpus_roundtrip(tmp_path):
    corpus_dir = write_rain_corpus(tmp_path / "c", count=3, size=16, seed=4)
    corpus = load_corpus(corpus_dir)
    assert len(corpus) == 3
    assert corpus.images[0].clean.shape == (3, 16, 16)
    assert corpus.images[0].file == "degraded_000000.ppm"


def test_load_corpus_rejects_mismatched_pair(tmp_path):
    corpus_dir = tmp_path / "bad"
    corpus_dir.mkdir()
    write_ppm(Tensor(np.zeros((3, 16, 16))), corpus_dir / "clean_000000.ppm")
    write_ppm(Tensor(np.zeros((3, 8, 8))), corpus_dir / "degraded_000000.ppm")
    (corpus_dir / "manifest.tsv").write_text(
        "index\tclean\tdegraded\tkind\tseed\n"
        "0\tclean_000000.ppm\tdegraded_000000.ppm\train\t1\n"
    )
    with pytest.raises(FormatError, match="pair shapes differ"):
        load_corpus(corpus_dir)


# --- parameter streams ------------------------------------------------------------------

def test_mapping_init_is_order_independent():
    # higher orders add a derivative net but must not disturb the mapping
    # net's starting point (independent init streams per network)
    plain = build_params(TINY_MAPPING, TINY_DERIVATIVE, 0, seed=11)
    composed = build_params(TINY_MAPPING, TINY_DERIVATIVE, 3, seed=11)
    assert not any(name.startswith("derivative.") for name in plain.names())
    assert any(name.startswith("derivative.") for name in composed.names())
    for name in plain.names():
        assert composed[name].data.tobytes() == plain[name].data.tobytes()


# --- the training loop ---------------------------------------------------------------------

def test_train_writes_log_and_checkpoint(tmp_path):
    corpus_dir = write_rain_corpus(tmp_path / "data", count=4, size=16, seed=5)
    out_dir = tmp_path / "run"
    final = train(corpus_dir, TINY_MAPPING, TINY_DERIVATIVE,
                  ComposerConfig(order=1), tiny_train_cfg(), out_dir)
    assert final == out_dir / "ckpt_epoch0002.bin"
    assert final.exists()
    lines = (out_dir / "loss.tsv").read_text().splitlines()
    assert lines[0] == LOSS_LOG_HEADER
    assert len(lines) == 1 + 2 * 1  # ceil(4/4) steps per epoch, 2 epochs
    first = lines[1].split("\t")
    assert first[0] == "0" and first[1] == "1"
    assert float(first[2]) == 1e-3
    assert math.isfinite(float(first[3]))


def test_checkpoint_cadence(tmp_path):
    corpus_dir = write_rain_corpus(tmp_path / "data", count=4, size=16, seed=6)
    out_dir = tmp_path / "run"
    final = train(corpus_dir, TINY_MAPPING, TINY_DERIVATIVE,
                  ComposerConfig(order=1),
                  tiny_train_cfg(epochs=5, checkpoint_every=2), out_dir)
    names = sorted(p.name for p in out_dir.glob("ckpt_*.bin"))
    assert names == ["ckpt_epoch0002.bin", "ckpt_epoch0004.bin", "ckpt_epoch0005.bin"]
    assert final.name == "ckpt_epoch0005.bin"


def test_train_rerun_is_byte_identical(tmp_path):
    corpus_dir = write_rain_corpus(tmp_path / "data", count=4, size=16, seed=7)
    outputs = []
    for tag in ("a", "b"):
        out_dir = tmp_path / tag
        final = train(corpus_dir, TINY_MAPPING, TINY_DERIVATIVE,
                      ComposerConfig(order=2), tiny_train_cfg(), out_dir)
        outputs.append((final.read_bytes(), (out_dir / "loss.tsv").read_bytes()))
    assert outputs[0] == outputs[1]


def test_patch_larger_than_corpus_images_is_config_error(tmp_path):
    corpus_dir = write_rain_corpus(tmp_path / "data", count=2, size=16, seed=8)
    with pytest.raises(ConfigError, match="smaller than patch size 32"):
        train(corpus_dir, TINY_MAPPING, TINY_DERIVATIVE, ComposerConfig(order=1),
              tiny_train_cfg(patch_size=32), tmp_path / "run")


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_aborts_with_step_and_flushed_log(tmp_path):
    corpus_dir = write_rain_corpus(tmp_path / "data", count=8, size=16, seed=9)
    out_dir = tmp_path / "run"
    with pytest.raises(DivergenceError) as excinfo:
        train(corpus_dir, TINY_MAPPING, TINY_DERIVATIVE, ComposerConfig(order=0),
              tiny_train_cfg(lr0=1e80, epochs=1), out_dir)
    assert excinfo.value.step == 2
    assert excinfo.value.lr == 1e80
    assert "step 2" in str(excinfo.value)
    lines = (out_dir / "loss.tsv").read_text().splitlines()
    assert lines[0] == LOSS_LOG_HEADER
    assert len(lines) == 2  # the one completed step was flushed before the abort


def test_loss_trends_down(tmp_path):
    corpus_dir = write_rain_corpus(tmp_path / "data", count=16, size=32, seed=10)
    out_dir = tmp_path / "run"
    spec = MappingSpec(channels=8, blocks=1)
    dspec = DerivativeSpec(in_channels=3, channels=8)
    train(corpus_dir, spec, dspec, ComposerConfig(order=1),
          tiny_train_cfg(patch_size=16, epochs=6, seed=1), out_dir)
    losses = [float(line.split("\t")[3])
              for line in (out_dir / "loss.tsv").read_text().splitlines()[1:]]
    assert len(losses) == 24
    assert np.mean(losses[-10:]) < np.mean(losses[:10])


def test_resume_matches_continuous_run(tmp_path):
    corpus_dir = write_rain_corpus(tmp_path / "data", count=8, size=16, seed=12)
    composer_cfg = ComposerConfig(order=2)

    continuous = train(corpus_dir, TINY_MAPPING, TINY_DERIVATIVE, composer_cfg,
                       tiny_train_cfg(epochs=10, checkpoint_every=5, seed=4),
                       tmp_path / "cont")

    half = train(corpus_dir, TINY_MAPPING, TINY_DERIVATIVE, composer_cfg,
                 tiny_train_cfg(epochs=5, checkpoint_every=5, seed=4),
                 tmp_path / "half")
    resumed = train(corpus_dir, TINY_MAPPING, TINY_DERIVATIVE, composer_cfg,
                    tiny_train_cfg(epochs=10, checkpoint_every=5, seed=4),
                    tmp_path / "resumed", resume_from=half)

    assert continuous.name == resumed.name == "ckpt_epoch0010.bin"
    assert continuous.read_bytes() == resumed.read_bytes()

    # the resumed log covers exactly the second half, and concatenating the
    # two halves reproduces the continuous log line for line
    cont_lines = (tmp_path / "cont" / "loss.tsv").read_text().splitlines()
    half_lines = (tmp_path / "half" / "loss.tsv").read_text().splitlines()
    res_lines = (tmp_path / "resumed" / "loss.tsv").read_text().splitlines()
    assert res_lines[1].startswith("5\t")
    assert half_lines[1:] + res_lines[1:] == cont_lines[1:]


def test_resume_beyond_config_is_rejected(tmp_path):
    corpus_dir = write_rain_corpus(tmp_path / "data", count=4, size=16, seed=13)
    final = train(corpus_dir, TINY_MAPPING, TINY_DERIVATIVE, ComposerConfig(order=1),
                  tiny_train_cfg(epochs=2), tmp_path / "first")
    with pytest.raises(ConfigError, match="already covers 2 epochs"):
        train(corpus_dir, TINY_MAPPING, TINY_DERIVATIVE, ComposerConfig(order=1),
              tiny_train_cfg(epochs=2), tmp_path / "second", resume_from=final)


def test_zero_weighted_series_trains_like_plain_mapping(tmp_path):
    # with a stubbed-out derivative net (zero output) and lambda 0, the
    # composed objective must drive the mapping net exactly like a plain
    # l1(F(y), x) objective: same patches, same gradients, same Adam moves
    corpus_dir = write_rain_corpus(tmp_path / "data", count=4, size=16, seed=14)
    corpus = load_corpus(corpus_dir)
    spec = TINY_MAPPING
    seed = 21
    steps = 6
    cfg = ComposerConfig(order=3, lam=0.0, variant="with_k_residual")

    def fresh():
        params = init_params(spec, derive_stream(seed, STREAM_INIT_MAPPING))
        return params, AdamState.for_params(params), \
            SplitMix64(derive_stream(seed, STREAM_DATA))

    composed_params, composed_state, rng_a = fresh()
    plain_params, plain_state, rng_b = fresh()
    zero_stub = lambda g, y: Tensor.zeros(g.shape)

    for _ in range(steps):
        degraded, clean = sample_patch_batch(corpus, 8, 4, rng_a)
        composed_params.zero_grads()
        with Graph() as graph:
            trace = compose_orders(
                lambda y: forward_mapping(composed_params, spec, y),
                zero_stub, degraded, cfg)
            total, _, _ = framework_loss_terms(trace, clean, cfg)
        backward(total, graph)
        adam_step(composed_params, composed_state, lr=1e-3)

        degraded_b, clean_b = sample_patch_batch(corpus, 8, 4, rng_b)
        assert degraded_b.data.tobytes() == degraded.data.tobytes()
        plain_params.zero_grads()
        with Graph() as graph:
            loss = l1_loss(forward_mapping(plain_params, spec, degraded_b), clean_b)
        backward(loss, graph)
        adam_step(plain_params, plain_state, lr=1e-3)

        for name in plain_params.names():
            assert np.array_equal(composed_params[name].data,
                                  plain_params[name].data), name
