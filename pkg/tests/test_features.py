import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rapgs import sh
from rapgs.errors import ValidationError
from rapgs.features import (
    FEATURE_COLUMNS,
    N_FEATURES,
    clip_rescale,
    color_anisotropy,
    compute_raw,
    dc_color,
    extract_features,
    global_zscores,
    normalize,
)
from rapgs.neighbors import SIGMA_FLOOR, build_knn
from rapgs.parallel import threads
from rapgs.scene import SplatScene, quaternion_to_matrix

from _builders import random_scene


# ---------------------------------------------------------------------------
# independent oracles


def sorted_percentile(values, q):
    """Linear-interpolation percentile from a plain sort."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    pos = (len(v) - 1) * q / 100.0
    lo = int(math.floor(pos))
    hi = min(lo + 1, len(v) - 1)
    return v[lo] + (v[hi] - v[lo]) * (pos - lo)


def reference_raw(scene, k, m, seed):
    """Row-by-row raw features written without vectorization."""
    n = len(scene)
    pts = scene.positions.astype(np.float64)
    from rapgs.parallel import derive_rng

    dirs = sh.uniform_directions(m, derive_rng(seed, "anisotropy"))
    out = np.zeros((n, 8))
    for i in range(n):
        d = sorted(
            (math.dist(pts[i], pts[j]), j) for j in range(n) if j != i
        )[:k]
        out[i, 0] = sum(x for x, _ in d) / len(d)
        ch_std = []
        for c in range(3):
            rest = scene.sh_rest[i, c * 15:(c + 1) * 15].astype(np.float64)
            vals = [float(rest @ sh.basis(dirs[j:j + 1])[0, 1:]) for j in range(m)]
            ch_std.append(float(np.std(vals)))
        out[i, 1] = sum(ch_std) / 3.0
        s = sorted(math.exp(float(x)) for x in scene.scale_raw[i])
        out[i, 2:5] = s
        out[i, 5] = s[0] * s[1] * s[2]
        out[i, 6] = 1.0 / (1.0 + math.exp(-float(scene.opacity_raw[i])))
        out[i, 7] = sum(0.5 + 0.28209479177387814 * float(x) for x in scene.sh_dc[i]) / 3.0
    return out


def reference_normalize(raw, k, pts, clip):
    n = len(raw)
    d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    np.fill_diagonal(d, np.inf)
    nbr = np.argsort(d, axis=1, kind="stable")[:, :k]
    cols = []
    for j in range(7):
        sd = raw[:, j].std()
        cols.append(np.zeros(n) if np.ptp(raw[:, j]) == 0 else (raw[:, j] - raw[:, j].mean()) / max(sd, SIGMA_FLOOR))
    for j in range(8):
        g = raw[nbr, j]
        cols.append((raw[:, j] - g.mean(1)) / np.maximum(g.std(1), SIGMA_FLOOR))
    out = []
    for c in cols:
        lo, hi = sorted_percentile(c, clip[0]), sorted_percentile(c, clip[1])
        out.append(np.full(n, 0.5) if hi - lo <= 1e-6 else (np.clip(c, lo, hi) - lo) / (hi - lo))
    return np.stack(out, 1)


# ---------------------------------------------------------------------------


class TestShBasis:
    def test_constants_closed_form(self):
        pi = math.pi
        assert sh.SH_C0 == pytest.approx(1 / (2 * math.sqrt(pi)), rel=1e-15)
        assert sh.SH_C1 == pytest.approx(math.sqrt(3 / (4 * pi)), rel=1e-15)
        assert sh.SH_C2[0] == pytest.approx(math.sqrt(15 / (4 * pi)), rel=1e-15)
        assert sh.SH_C2[2] == pytest.approx(math.sqrt(5 / (16 * pi)), rel=1e-15)
        assert sh.SH_C2[4] == pytest.approx(math.sqrt(15 / (16 * pi)), rel=1e-15)
        assert sh.SH_C3[0] == pytest.approx(-math.sqrt(35 / (32 * pi)), rel=1e-15)
        assert sh.SH_C3[1] == pytest.approx(math.sqrt(105 / (4 * pi)), rel=1e-15)
        assert sh.SH_C3[2] == pytest.approx(-math.sqrt(21 / (32 * pi)), rel=1e-15)
        assert sh.SH_C3[3] == pytest.approx(math.sqrt(7 / (16 * pi)), rel=1e-15)

    def test_orthonormal_on_sphere(self):
        # Gauss-Legendre in cos(theta) x uniform phi integrates degree <= 6 exactly.
        u, wu = np.polynomial.legendre.leggauss(8)
        phi = np.arange(16) * 2 * np.pi / 16
        ct, ph = np.meshgrid(u, phi, indexing="ij")
        st_ = np.sqrt(1 - ct**2)
        dirs = np.stack([st_ * np.cos(ph), st_ * np.sin(ph), ct], -1).reshape(-1, 3)
        w = (wu[:, None] * np.full(16, 2 * np.pi / 16)[None]).ravel()
        y = sh.basis(dirs)
        np.testing.assert_allclose((y * w[:, None]).T @ y, np.eye(16), atol=1e-12)

    def test_channel_major_layout(self):
        rest = np.zeros((1, 45))
        rest[0, 15 + 2] = 1.0  # G channel, third view-dependent coefficient
        c = sh.coefficients(np.zeros((1, 3)), rest)
        assert c[0, 1, 3] == 1.0 and c.sum() == 1.0


class TestAnisotropy:
    def test_zero_rest_is_exactly_zero(self):
        s = random_scene(20, sh_scale=0.0)
        np.testing.assert_array_equal(color_anisotropy(s.sh_dc, s.sh_rest), 0.0)

    def test_z_aligned_degree_one_monte_carlo(self):
        rest = np.zeros((1, 45))
        rest[0, 1] = 1.0  # R channel, Y_1^0 ~ z
        got = color_anisotropy(np.zeros((1, 3)), rest, m=10_000, seed=3)[0]
        # Oracle: 10^6 independent uniform directions, color = 0.5 + c1*z for R only.
        v = np.random.default_rng(12345).normal(size=(1_000_000, 3))
        z = v[:, 2] / np.linalg.norm(v, axis=1)
        red = 0.5 + 0.4886025119029199 * z
        oracle = (red.std() + 0.0 + 0.0) / 3.0
        assert abs(got - oracle) / oracle < 0.02
        # and the closed form c1 / (3 sqrt 3)
        assert abs(oracle - 0.4886025119029199 / (3 * math.sqrt(3))) < 1e-3

    def test_identical_sh_identical_value(self):
        s = random_scene(1)
        dc = np.repeat(s.sh_dc, 2, 0)
        rest = np.repeat(s.sh_rest, 2, 0)
        a = color_anisotropy(dc, rest)
        assert a[0] == a[1]

    def test_dc_does_not_matter(self):
        s = random_scene(5)
        np.testing.assert_array_equal(
            color_anisotropy(s.sh_dc, s.sh_rest), color_anisotropy(s.sh_dc * 3, s.sh_rest)
        )

    def test_needs_two_directions(self):
        with pytest.raises(ValidationError):
            color_anisotropy(np.zeros((1, 3)), np.zeros((1, 45)), m=1)


class TestDcColor:
    def test_values(self):
        np.testing.assert_allclose(dc_color([[0, 0, 0]]), [0.5])
        np.testing.assert_allclose(dc_color([[1, 1, 1]]), [0.5 + 0.28209479], atol=1e-8)
        np.testing.assert_allclose(dc_color([[0.7, -0.7, 0]]), [0.5], atol=1e-15)


class TestRaw:
    def test_scales_and_volume(self):
        s = random_scene(3).replace(scale_raw=np.tile([math.log(3), 0.0, math.log(2)], (3, 1)))
        raw = compute_raw(s, build_knn(s.positions, 2))
        np.testing.assert_allclose(raw[0, 2:6], [1, 2, 3, 6], rtol=1e-6)

    def test_scale_permutation_invariant(self):
        s = random_scene(10, seed=4)
        perm = s.replace(scale_raw=s.scale_raw[:, [2, 0, 1]])
        t = build_knn(s.positions, 4)
        np.testing.assert_array_equal(compute_raw(s, t)[:, 2:6], compute_raw(perm, t)[:, 2:6])

    def test_matches_reference_oracle(self):
        s = random_scene(50, seed=5)
        got = compute_raw(s, build_knn(s.positions, 8), m=16, seed=2)
        np.testing.assert_allclose(got, reference_raw(s, 8, 16, 2), rtol=1e-6, atol=1e-12)


class TestNormalize:
    def test_constant_column(self):
        raw = np.random.default_rng(0).normal(size=(40, 8))
        raw[:, 4] = 2.5
        t = build_knn(np.random.default_rng(1).normal(size=(40, 3)), 5)
        f = normalize(raw, t)
        assert (global_zscores(raw)[:, 4] == 0).all()
        np.testing.assert_array_equal(f[:, 4], 0.5)
        np.testing.assert_array_equal(f[:, 7 + 4], 0.5)

    @given(st.integers(0, 10**6))
    @settings(max_examples=25, deadline=None)
    def test_full_clip_endpoints(self, seed):
        col = np.random.default_rng(seed).normal(size=30)
        out = clip_rescale(col, (0.0, 100.0))
        assert out.min() == 0.0 and out.max() == 1.0

    def test_matches_reference_oracle(self):
        s = random_scene(200, seed=6)
        res = extract_features(s, k=16, m=8, seed=1, clip=(1, 99))
        ref = reference_normalize(res.raw, 16, s.positions.astype(np.float64), (1, 99))
        np.testing.assert_allclose(res.features, ref, atol=1e-6)

    def test_bad_clip(self):
        raw = np.zeros((5, 8))
        t = build_knn(np.random.default_rng(2).normal(size=(5, 3)), 2)
        with pytest.raises(ValidationError):
            normalize(raw, t, (50, 10))


class TestExtract:
    def test_shape_range_dtype(self):
        f = extract_features(random_scene(300, seed=7), k=32).features
        assert f.shape == (300, N_FEATURES) == (300, len(FEATURE_COLUMNS))
        assert f.dtype == np.float32
        assert f.min() >= 0.0 and f.max() <= 1.0

    def test_deterministic(self):
        s = random_scene(150, seed=8)
        a = extract_features(s, k=20, seed=3).features
        b = extract_features(s, k=20, seed=3).features
        assert a.tobytes() == b.tobytes()

    def test_thread_independent(self):
        s = random_scene(9000, seed=9, spread=5.0)
        with threads(1):
            a = extract_features(s, k=16).features
        with threads(8):
            b = extract_features(s, k=16).features
        assert a.tobytes() == b.tobytes()

    def test_single_primitive(self):
        res = extract_features(random_scene(1))
        assert res.degenerate
        np.testing.assert_array_equal(res.features, np.full((1, 15), 0.5, np.float32))

    def test_empty(self):
        assert extract_features(SplatScene.empty()).features.shape == (0, 15)

    def test_few_primitives_flagged(self):
        res = extract_features(random_scene(6), k=128)
        assert res.degenerate and res.features.shape == (6, 15)

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 10**6))
    def test_rigid_transform_invariance(self, seed):
        rng = np.random.default_rng(seed)
        s = random_scene(80, seed=seed)
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        q *= np.sign(np.linalg.det(q))
        moved = s.replace(
            positions=s.positions.astype(np.float64) @ q.T + rng.normal(size=3),
            rotation=_compose(q, s.rotation),
        )
        a = compute_raw(s, build_knn(s.positions, 8))
        b = compute_raw(moved, build_knn(moved.positions, 8))
        keep = [0, 2, 3, 4, 5, 6, 7]  # anisotropy rotates with the SH frame
        np.testing.assert_allclose(a[:, keep], b[:, keep], rtol=1e-5, atol=1e-6)

    def test_duplicated_scene_keeps_global_zscores(self):
        s = random_scene(60, seed=10)
        raw = compute_raw(s, build_knn(s.positions, 8))
        doubled = np.concatenate([raw, raw])
        np.testing.assert_allclose(global_zscores(doubled)[:60], global_zscores(raw), atol=1e-6)


def _compose(rot, quats):
    """Quaternions for R @ R(q), via matrices (independent of the model code)."""
    mats = rot @ quaternion_to_matrix(np.asarray(quats, np.float64) / np.linalg.norm(quats, axis=1, keepdims=True))
    out = []
    for m in mats:
        w = math.sqrt(max(0.0, 1 + m[0, 0] + m[1, 1] + m[2, 2])) / 2
        if w > 1e-3:
            out.append([w, (m[2, 1] - m[1, 2]) / (4 * w), (m[0, 2] - m[2, 0]) / (4 * w), (m[1, 0] - m[0, 1]) / (4 * w)])
        else:
            i = int(np.argmax(np.diag(m)))
            j, k = (i + 1) % 3, (i + 2) % 3
            r = math.sqrt(1 + m[i, i] - m[j, j] - m[k, k])
            q = [0.0, 0.0, 0.0, 0.0]
            q[0] = (m[k, j] - m[j, k]) / (2 * r)
            q[1 + i] = r / 2
            q[1 + j] = (m[j, i] + m[i, j]) / (2 * r)
            q[1 + k] = (m[k, i] + m[i, k]) / (2 * r)
            out.append(q)
    return np.array(out)
