import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ghostproj import io
from ghostproj.basis import BasisSpec, make_basis
from ghostproj.correlate import correlation_stats, filter_basis, pseudo_correlation
from ghostproj.metrics import report
from ghostproj.phantom import COLOR_SECOND_MOMENT, PRESETS, color_phantom, pattern, phantom
from ghostproj.schemes import ExposurePlan


@pytest.mark.parametrize("mode", [m for m, v in PRESETS.items() if v is not None])
def test_presets_hit_their_moments(mode):
    mean, second = PRESETS[mode]
    img = phantom(40, 40, mode)
    assert img.mean == pytest.approx(mean, abs=1e-12)
    assert img.second_moment == pytest.approx(second, rel=1e-12)


def test_transmission_pattern_in_unit_range():
    raw = pattern(40, 40)
    assert raw.min() >= 0 and raw.max() <= 1
    assert np.array_equal(raw, pattern(40, 40))
    with pytest.raises(ValueError):
        pattern(4, 40)


def test_custom_and_invalid():
    img = phantom(16, 20, "custom", mean=0.3, second_moment=0.2)
    assert img.shape == (16, 20) and img.mean == pytest.approx(0.3)
    with pytest.raises(ValueError):
        phantom(16, 16, "custom", mean=1.0, second_moment=0.5)
    with pytest.raises(ValueError):
        phantom(16, 16, "nope")
    assert phantom(16, 16, "zero-centered").zero_centered


def test_color_channels_orthogonal():
    img = color_phantom(24, 24)
    ch = img.values.reshape(3, -1)
    gram = ch @ ch.T
    np.testing.assert_allclose(gram, np.diag(np.diag(gram)), atol=1e-10)
    assert np.allclose(np.diag(gram), gram[0, 0])
    assert img.second_moment == pytest.approx(COLOR_SECOND_MOMENT)
    assert color_phantom(16, 24).shape == (16, 24)


@given(value=st.one_of(st.integers(-10**12, 10**12), st.floats(allow_nan=False, allow_infinity=False),
                       st.booleans(), st.text(alphabet="abcxyz_-/.", min_size=1, max_size=12)))
@settings(max_examples=100, deadline=None)
def test_config_value_round_trip(value):
    text = io.format_value(value)
    back = io.parse_value(text)
    if isinstance(value, str):
        if value.lower() in ("true", "yes", "on", "false", "no", "off", "none", "null"):
            return
        try:
            float(value)
            return
        except ValueError:
            pass
    assert back == value and type(back) is type(value)


def test_kv_comments(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("# head\nscheme = filtered  # inline\nN = 100000\nsigma=0.1\n\n")
    assert io.read_kv(p) == {"scheme": "filtered", "N": 100000, "sigma": 0.1}
    p.write_text("oops\n")
    with pytest.raises(ValueError):
        io.read_kv(p)


def test_csv_and_pgm_round_trip(tmp_path):
    vals = np.random.default_rng(0).standard_normal((5, 7))
    io.write_csv_array(tmp_path / "a.csv", vals)
    assert np.array_equal(io.read_csv_array(tmp_path / "a.csv"), vals)
    lo, hi = io.write_pgm(tmp_path / "a.pgm", vals)
    back = io.read_pgm(tmp_path / "a.pgm")
    assert back.shape == vals.shape
    assert np.abs(lo + back * (hi - lo) - vals).max() <= (hi - lo) / 255 * 0.5 + 1e-12


def test_plan_round_trip(tmp_path):
    plan = ExposurePlan([2, 5, 9], [0.1, 1 / 3, 2e-17], 1.5, "x")
    io.write_plan(tmp_path / "p.csv", plan)
    back = io.read_plan(tmp_path / "p.csv", 1.5)
    assert np.array_equal(back.indices, plan.indices) and np.array_equal(back.exposures, plan.exposures)


@pytest.mark.parametrize("fmt", ["csv", "pgm"])
def test_mask_export_import(tmp_path, fmt):
    basis = make_basis(BasisSpec(6, 5, 20, "binary01" if fmt == "pgm" else "uniform01", 3))
    io.export_masks(tmp_path, basis, [0, 7, 19], fmt)
    spec, idx, masks = io.import_masks(tmp_path)
    assert spec == basis.spec and idx == [0, 7, 19]
    assert np.array_equal(masks, basis.flat()[[0, 7, 19]].reshape(3, 6, 5))


def test_selection_and_report_files(tmp_path):
    basis = make_basis(BasisSpec(8, 8, 300, "uniform01", 1))
    img = phantom(8, 8, "filtered")
    stats = correlation_stats(basis.moments, img)
    cors = pseudo_correlation(basis, img)
    sel = filter_basis(cors, stats, stats.cutoff_sigmas(0.612))
    io.write_selection(tmp_path / "sel", sel)
    assert np.array_equal(np.loadtxt(tmp_path / "sel_indices.txt", dtype=int), sel.kept_indices)
    assert io.read_kv(tmp_path / "sel.txt")["n_kept"] == sel.n_kept
    io.write_correlations(tmp_path / "c.csv", cors)
    assert np.array_equal(np.loadtxt(tmp_path / "c.csv", delimiter=",", skiprows=1)[:, 1], cors)
    rep = report(img.values + 0.01 * np.random.default_rng(0).standard_normal((8, 8)), img,
                 predicted_variance=1e-4)
    io.write_report(tmp_path / "r", rep, {"extra": 1})
    kv = io.read_kv(tmp_path / "r.txt")
    assert kv["extra"] == 1 and kv["snr_global"] == rep.snr_global
    hist = np.loadtxt(tmp_path / "r_histogram.csv", delimiter=",", skiprows=1)
    assert hist[:, 2].sum() == 64
