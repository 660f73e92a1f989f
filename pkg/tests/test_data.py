import logging

import numpy as np
import pytest

from fskws import data as D
from fskws import protocol as P
from fskws.io import write_fmap


def write_rows(tmp_path, rows, header="path,label,split"):
    for p, _, _ in rows:
        if not (tmp_path / p).exists():
            write_fmap(tmp_path / p, np.zeros((49, 10)))
    m = tmp_path / "m.csv"
    m.write_text(header + "\n" + "".join(f"{p},{l},{s}\n" for p, l, s in rows))
    return m


def test_manifest_three_rows(tmp_path):
    m = write_rows(tmp_path, [("a.fmap", "yes", "train"), ("b.fmap", "no", "val"), ("c.fmap", "yes", "test")])
    man = D.load_manifest(m)
    assert len(man.rows) == 3 and man.labels() == ["no", "yes"]
    assert [r.label for r in man.split("train")] == ["yes"]
    assert man.rows[0].path == tmp_path / "a.fmap"


def test_manifest_unknown_split_names_row(tmp_path):
    m = write_rows(tmp_path, [("a.fmap", "yes", "train"), ("b.fmap", "no", "eval")])
    with pytest.raises(ValueError, match="row 3.*'eval'"):
        D.load_manifest(m)


def test_manifest_missing_file_and_header(tmp_path):
    m = tmp_path / "m.csv"
    m.write_text("path,label,split\nghost.fmap,a,train\n")
    with pytest.raises(FileNotFoundError, match="ghost"):
        D.load_manifest(m)
    m.write_text("file,label,split\n")
    with pytest.raises(ValueError, match="header"):
        D.load_manifest(m)


def test_manifest_duplicate_path_warns(tmp_path, caplog):
    m = write_rows(tmp_path, [("a.fmap", "yes", "train"), ("a.fmap", "yes", "test")])
    with caplog.at_level(logging.WARNING):
        man = D.load_manifest(m)
    assert len(man.rows) == 2 and "reuses a.fmap" in caplog.text


def test_synth_roundtrip_counts(tmp_path):
    cfg = D.preset("default", n_classes=4, samples_per_class=10, dim=6)
    man = D.synth_dataset(cfg, tmp_path)
    assert len(man.rows) == 40
    assert [len(man.split(s)) for s in ("train", "val", "test")] == [28, 4, 8]
    x, y, names, teacher = man.load_split("train", with_teacher=True)
    assert x.shape == (28, 49, 6) and teacher.shape == (28, 64) and names == ["w0", "w1", "w2", "w3"]
    feats, teach, _, splits = D.generate(cfg)
    keep = [i for i, s in enumerate(splits) if s == "train"]
    np.testing.assert_array_equal(x, feats[keep])
    np.testing.assert_array_equal(teacher, teach[keep])
    assert man.meta["synth.dim"] == "6"


def test_generator_is_deterministic():
    a = D.generate(D.preset("default", n_classes=3, samples_per_class=5))
    b = D.generate(D.preset("default", n_classes=3, samples_per_class=5))
    assert a[0].tobytes() == b[0].tobytes() and a[1].tobytes() == b[1].tobytes()


def test_small_sigma_gives_identical_class_samples():
    cfg = D.preset("default", n_classes=3, samples_per_class=6, sigma=1e-12, label_noise=0.0, dim=5)
    x, t, labels, _ = D.generate(cfg)
    labels = np.array(labels)
    for k in set(labels):
        np.testing.assert_allclose(x[labels == k], np.broadcast_to(x[labels == k][0], x[labels == k].shape),
                                   atol=1e-9)
        np.testing.assert_allclose(t[labels == k], np.broadcast_to(t[labels == k][0], t[labels == k].shape),
                                   atol=1e-6)


def test_teacher_lift_is_orthonormal_and_preserves_geometry():
    lift = D.teacher_lift(10, 64, 0)
    np.testing.assert_allclose(lift.T @ lift, np.eye(10), atol=1e-12)
    cfg = D.preset("default", n_classes=5, samples_per_class=3, sigma=1e-12, label_noise=0.0, dim=10)
    _, t, _, _ = D.generate(cfg)
    norms = np.linalg.norm(t, axis=1)
    np.testing.assert_allclose(norms, cfg.separation, rtol=1e-5)


def test_label_noise_spares_test_split():
    cfg = D.preset("default", n_classes=5, samples_per_class=20, label_noise=0.9, sigma=1e-12, jitter_frames=0)
    x, _, labels, splits = D.generate(cfg)
    clean = D.generate(D.preset("default", n_classes=5, samples_per_class=20, label_noise=0.0, sigma=1e-12,
                                jitter_frames=0))[0]
    labels = np.array(labels)
    # each test sample carries its own class's span; many train samples do not
    for k in set(labels):
        ref = clean[(labels == k)][0]
        idx = [i for i in np.flatnonzero(labels == k) if splits[i] == "test"]
        for i in idx:
            np.testing.assert_allclose(x[i], ref, atol=1e-9)
    moved = [i for i, s in enumerate(splits) if s == "train" and not np.allclose(x[i], clean[i], atol=1e-9)]
    assert len(moved) > 0


def test_default_preset_pooled_stats_pinned():
    x, _, labels, _ = D.generate(D.preset("default"))
    intra, inter = P.distance_stats(x.mean(axis=1).astype(np.float64), labels)
    assert intra == pytest.approx(0.6771917982574277, abs=1e-9)
    assert inter == pytest.approx(0.9927814436033535, abs=1e-9)
    assert intra < inter


def test_gsc_shape_labels_and_meta(tmp_path):
    man = D.synth_dataset(D.preset("gsc-shape", samples_per_class=4), tmp_path)
    assert len(man.labels()) == 36
    enrolled, others = man.meta["enrolled"].split(","), man.meta["others"].split(",")
    assert len(enrolled) == 11 and len(others) == 25 and "silence" in enrolled
    assert set(enrolled) | set(others) == set(man.labels())
    assert not man.split("val")


def test_config_validation():
    with pytest.raises(ValueError, match="separation"):
        D.SyntheticConfig(sigma=0.0)
    with pytest.raises(ValueError, match="word_frames"):
        D.SyntheticConfig(word_frames=50)
    with pytest.raises(ValueError, match="label_noise"):
        D.SyntheticConfig(label_noise=1.0)
    with pytest.raises(ValueError, match="unknown preset"):
        D.preset("nope")
