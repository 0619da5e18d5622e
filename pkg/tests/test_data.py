import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from labelmend.data import (ConfidenceMap, ConfigError, LabelMask, LoadError,
                            RunConfig, load_dataset, parse_config,
                            parse_config_text, read_pgm, read_pgm_bytes,
                            write_pgm)


def _raw_pgm(path, payload, w, h, magic=b"P5", maxval=255):
    path.write_bytes(magic + f"\n{w} {h}\n{maxval}\n".encode() + bytes(payload))
    return path


def test_read_pgm_scales_image_bytes(tmp_path):
    path = _raw_pgm(tmp_path / "a.pgm", [0, 255, 128, 64], 2, 2)
    img = read_pgm(path, "image")
    np.testing.assert_array_equal(img, [[0, 1], [128 / 255, 64 / 255]])


def test_read_pgm_rejects_p6(tmp_path):
    path = _raw_pgm(tmp_path / "a.pgm", [0] * 12, 2, 2, magic=b"P6")
    with pytest.raises(LoadError, match="unsupported magic") as info:
        read_pgm(path)
    assert "a.pgm" in str(info.value)


def test_read_pgm_truncated_and_maxval(tmp_path):
    with pytest.raises(LoadError, match="truncated"):
        read_pgm(_raw_pgm(tmp_path / "t.pgm", [1, 2, 3], 2, 2))
    with pytest.raises(LoadError, match="maxval"):
        read_pgm(_raw_pgm(tmp_path / "m.pgm", [1, 2, 3, 4], 2, 2, maxval=1023))


def test_read_pgm_mask_value_out_of_range(tmp_path):
    path = _raw_pgm(tmp_path / "m.pgm", [0, 1, 2, 0], 2, 2)
    with pytest.raises(LoadError, match=">= k=2"):
        read_pgm(path, "mask", k=2)
    assert read_pgm(path, "mask", k=3).data.max() == 2


def test_read_pgm_skips_header_comments(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P5\n# made by hand\n2 1\n255\n\x07\x09")
    np.testing.assert_array_equal(read_pgm_bytes(path), [[7, 9]])


def test_write_pgm_byte_rules(tmp_path):
    conf = ConfidenceMap(np.array([[75, 100]]), 100)
    write_pgm(conf, tmp_path / "c.pgm")
    assert list(read_pgm_bytes(tmp_path / "c.pgm").ravel()) == [191, 255]

    write_pgm(LabelMask(np.array([[1, 0]])), tmp_path / "l.pgm")
    assert list(read_pgm_bytes(tmp_path / "l.pgm").ravel()) == [1, 0]

    write_pgm(np.array([[1.0, 0.0]]), tmp_path / "i.pgm")
    assert list(read_pgm_bytes(tmp_path / "i.pgm").ravel()) == [255, 0]


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.uint8, hnp.array_shapes(min_dims=2, max_dims=2, max_side=9),
                  elements=st.integers(0, 4)))
def test_mask_round_trip(tmp_path_factory, data):
    path = tmp_path_factory.mktemp("rt") / "m.pgm"
    mask = LabelMask(data, k=5, provenance="pseudo")
    write_pgm(mask, path)
    assert read_pgm(path, "mask", k=5, provenance="pseudo") == mask


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.uint8, (4, 8)))
def test_quantized_image_round_trip(tmp_path_factory, raw):
    path = tmp_path_factory.mktemp("rt") / "i.pgm"
    image = raw / 255.0
    write_pgm(image, path)
    np.testing.assert_array_equal(read_pgm(path, "image"), image)


def test_label_mask_one_hot_and_invariants():
    mask = LabelMask(np.array([[0, 2], [1, 0]]), k=3)
    assert mask.one_hot()[0, 1].tolist() == [0, 0, 1]
    with pytest.raises(ValueError):
        LabelMask(np.array([[0, 3]]), k=3)
    with pytest.raises(ValueError):
        LabelMask(np.array([[0]]), provenance="guess")


def _write_sample(root, sid, h=8, w=8, label_shape=None, gt=True):
    for sub in ("images", "labels", "ground_truth"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    write_pgm(np.zeros((h, w)), root / "images" / f"{sid}.pgm")
    write_pgm(LabelMask(np.zeros(label_shape or (h, w))), root / "labels" / f"{sid}.pgm")
    if gt:
        write_pgm(LabelMask(np.zeros((h, w))), root / "ground_truth" / f"{sid}.pgm")


def test_load_dataset_sorts_ids(tmp_path):
    _write_sample(tmp_path, "b")
    _write_sample(tmp_path, "a")
    ds = load_dataset(tmp_path)
    assert ds.ids == ["a", "b"]
    assert ds.samples[0].pseudo.provenance == "pseudo"
    assert ds.samples[0].ground_truth.provenance == "ground_truth"


def test_load_dataset_errors(tmp_path):
    (tmp_path / "images").mkdir()
    with pytest.raises(LoadError, match="empty dataset"):
        load_dataset(tmp_path)
    _write_sample(tmp_path, "a", 32, 32, label_shape=(16, 16))
    with pytest.raises(LoadError, match="dimension mismatch"):
        load_dataset(tmp_path)


def test_load_dataset_missing_label(tmp_path):
    _write_sample(tmp_path, "a")
    (tmp_path / "labels" / "a.pgm").unlink()
    with pytest.raises(LoadError, match="missing label"):
        load_dataset(tmp_path)


def test_parse_config_defaults_and_reference_values(tmp_path):
    empty = tmp_path / "empty.cfg"
    empty.write_text("# nothing\n\n")
    cfg = parse_config(empty)
    assert cfg == RunConfig()
    assert cfg.gamma == 0.05
    assert (cfg.beta, cfg.num_passes, cfg.e_start, cfg.epochs) == (0.10, 100, 10, 60)
    assert (cfg.lr0, cfg.beta1_pre, cfg.beta1_post, cfg.beta2) == (0.001, 0.9, 0.1, 0.999)
    assert (cfg.l2_mu, cfg.tau, cfg.p_drop, cfg.rounds, cfg.k) == (1e-4, 0.8, 0.1, 1, 2)
    assert cfg.train_dropout is False

    jsrt = tmp_path / "jsrt.cfg"
    jsrt.write_text("beta = 0.2  # forget rate\n")
    assert parse_config(jsrt).beta == 0.20


@pytest.mark.parametrize("text, key", [
    ("beta = 1.5", "beta"),
    ("gamma = -0.1", "gamma"),
    ("num_passes = 0", "num_passes"),
    ("colour = red", "colour"),
    ("train_dropout = maybe", "train_dropout"),
])
def test_parse_config_errors_name_the_key(text, key):
    with pytest.raises(ConfigError, match=key):
        parse_config_text(text)


@settings(max_examples=50, deadline=None)
@given(st.builds(RunConfig,
                 beta=st.floats(0, 0.99), gamma=st.floats(0, 0.99),
                 tau=st.floats(0, 1.5), p_drop=st.floats(0, 0.9),
                 num_passes=st.integers(1, 500), seed=st.integers(0, 2**63 - 1),
                 train_dropout=st.booleans(), ce_reduction=st.sampled_from(["mean", "sum"])))
def test_config_text_round_trip(cfg):
    again = parse_config_text(cfg.to_text())
    assert again == cfg
    assert parse_config_text(again.to_text()) == again
