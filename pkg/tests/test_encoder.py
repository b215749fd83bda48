import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uaclip.encoder import (
    EMPTY_BUCKET,
    EncoderDims,
    EncoderParams,
    cosine_similarity,
    encode_image,
    encode_text,
    featurize_image,
    featurize_text,
    fnv1a,
    init_params,
    tower_forward,
)
from uaclip.errors import DegenerateEmbedding
from uaclip.imaging import RasterImage


def pooling_oracle(img, G):
    """Area-weighted cell means by explicit interval overlap."""
    out = np.zeros((G, G, 3))
    ch, cw = img.height / G, img.width / G
    for a in range(G):
        for b in range(G):
            total = np.zeros(3)
            for y in range(img.height):
                oy = max(0.0, min((a + 1) * ch, y + 1) - max(a * ch, y))
                for x in range(img.width):
                    ox = max(0.0, min((b + 1) * cw, x + 1) - max(b * cw, x))
                    total += oy * ox * img.pixels[y, x]
            out[a, b] = total / (ch * cw)
    return out.ravel()


def matvec(W, x):
    return [sum(W[r][c] * x[c] for c in range(len(x))) for r in range(len(W))]


class TestFeaturizeText:
    def test_empty_sentinel(self):
        f = featurize_text("", 16)
        assert f[EMPTY_BUCKET] == 1 and f.sum() == 1

    def test_punctuation_only_is_empty(self):
        assert np.array_equal(featurize_text(" ,.! ", 16), featurize_text("", 16))

    def test_token_and_bigram_counts(self):
        f = featurize_text("lamp lamp", 8)
        assert f[fnv1a("lamp") % 8] == 2
        assert f[fnv1a("lamp lamp") % 8] == 1
        assert f.sum() == 3

    def test_deterministic_and_case_folded(self):
        a = featurize_text("warm cozy bedroom", 512)
        assert np.array_equal(a, featurize_text("warm cozy bedroom", 512))
        assert np.array_equal(a, featurize_text("Warm, COZY bedroom!", 512))

    def test_fnv_reference_values(self):
        # published 64-bit FNV-1a test vectors
        assert fnv1a("") == 0xCBF29CE484222325
        assert fnv1a("a") == 0xAF63DC4C8601EC8C
        assert fnv1a("foobar") == 0x85944171F73967E8


class TestFeaturizeImage:
    def test_uniform(self):
        img = RasterImage.uniform(7, 5, (0.5, 0.5, 0.5))
        for G in (1, 2, 3, 8):
            assert np.allclose(featurize_image(img, G), 0.5, atol=1e-15)

    def test_identity_when_grid_matches(self, random_image):
        img = random_image(4, 4)
        assert np.array_equal(featurize_image(img, 4), img.pixels.ravel())

    @pytest.mark.parametrize("shape,G", [((4, 4), 2), ((5, 7), 3), ((3, 3), 2)])
    def test_matches_pooling_oracle(self, random_image, shape, G):
        img = random_image(*shape)
        assert np.allclose(featurize_image(img, G), pooling_oracle(img, G), atol=1e-12)

    def test_length(self, random_image):
        assert featurize_image(random_image(9, 9), 3).shape == (27,)


class TestParams:
    def test_same_seed_identical(self):
        a, b = init_params(3, EncoderDims(4, 2, 8, 3)), init_params(3, EncoderDims(4, 2, 8, 3))
        for k in a.tensors:
            assert np.array_equal(a[k], b[k])

    def test_different_seed_differs(self):
        a, b = init_params(3, EncoderDims(4, 2, 8, 0)), init_params(4, EncoderDims(4, 2, 8, 0))
        assert any(not np.array_equal(a[k], b[k]) for k in a.tensors)

    def test_linear_shapes(self):
        p = init_params(0, EncoderDims(d=2, G=1, H=2, m=0))
        assert p["img_proj_w"].shape == (2, 3)
        assert p["txt_proj_w"].shape == (2, 2)

    def test_glorot_bound(self):
        p = init_params(0, EncoderDims(d=4, G=2, H=8, m=0))
        assert np.abs(p["img_proj_w"]).max() <= np.sqrt(6 / (12 + 4))

    def test_json_round_trip_exact(self, tmp_path):
        p = init_params(11, EncoderDims(4, 2, 8, 3))
        p.save(tmp_path / "p.json")
        q = EncoderParams.load(tmp_path / "p.json")
        assert q.dims == p.dims and q.seed == p.seed
        for k in p.tensors:
            assert np.array_equal(p[k], q[k])

    def test_immutable(self):
        p = init_params(0, EncoderDims(4, 2, 8, 0))
        with pytest.raises(ValueError):
            p["img_proj_w"][0, 0] = 1.0


class TestEncode:
    def test_unit_norm(self, rng):
        p = init_params(1, EncoderDims(8, 2, 16, 5))
        U = encode_image(p, rng.random((10, 12)))
        assert np.allclose(np.linalg.norm(U, axis=1), 1.0, atol=1e-9)
        V = encode_text(p, rng.integers(0, 3, size=(10, 16)))
        assert np.allclose(np.linalg.norm(V, axis=1), 1.0, atol=1e-9)

    def test_zero_weights_degenerate(self):
        p = init_params(0, EncoderDims(4, 2, 8, 0))
        zero = p.replace({k: np.zeros_like(v) for k, v in p.tensors.items()})
        with pytest.raises(DegenerateEmbedding):
            encode_image(zero, np.ones(12))

    def test_linear_image_tower_matches_matvec(self, rng):
        dims = EncoderDims(4, 2, 8, 0)
        p = init_params(2, dims)
        p = p.replace({**p.tensors, "img_proj_b": rng.normal(size=4)})
        f = rng.random(12)
        W, b = p["img_proj_w"].tolist(), p["img_proj_b"].tolist()
        for scale in (1.0, 2.0):
            z = [zi + bi for zi, bi in zip(matvec(W, (scale * f).tolist()), b)]
            norm = sum(v * v for v in z) ** 0.5
            assert np.allclose(encode_image(p, scale * f), np.array(z) / norm, atol=1e-12)

    def test_one_hot_text(self, rng):
        p = init_params(5, EncoderDims(4, 2, 8, 0))
        p = p.replace({**p.tensors, "txt_proj_b": rng.normal(size=4)})
        f = np.zeros(8)
        f[3] = 1
        z = p["txt_proj_w"][:, 3] + p["txt_proj_b"]
        assert np.allclose(encode_text(p, f), z / np.linalg.norm(z), atol=1e-12)

    def test_identical_text_identical_embedding(self):
        p = init_params(0, EncoderDims(4, 2, 64, 3))
        f = featurize_text("bright red lamp", 64)
        assert np.array_equal(encode_text(p, f), encode_text(p, f))

    def test_continuity_bound(self, rng):
        p = init_params(9, EncoderDims(4, 2, 8, 0))
        f = rng.random(12)
        eps = 1e-3
        g = f.copy()
        g[4] += eps
        _, c1 = tower_forward(p, "img", f)
        _, c2 = tower_forward(p, "img", g)
        z1 = c1["U"][0] * c1["norms"][0]
        z2 = c2["U"][0] * c2["norms"][0]
        assert np.linalg.norm(z2 - z1) <= np.linalg.norm(p["img_proj_w"], 2) * eps + 1e-15


class TestCosine:
    def test_identical(self):
        a = np.array([0.6, 0.8])
        assert cosine_similarity(a, a) == pytest.approx(1.0, abs=1e-15)

    def test_opposite(self):
        a = np.array([0.6, 0.8])
        assert cosine_similarity(a, -a) == pytest.approx(-1.0, abs=1e-15)

    def test_orthogonal(self):
        assert cosine_similarity(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0

    def test_clamped(self):
        a = np.array([1.0 + 1e-12, 0.0])
        assert cosine_similarity(a, a) == 1.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(0, 3))
def test_self_similarity_and_symmetry(seed, m):
    p = init_params(seed, EncoderDims(4, 2, 8, m))
    rng = np.random.default_rng(seed)
    a = encode_image(p, rng.random(12))
    b = encode_text(p, rng.integers(0, 3, size=8) + np.eye(8)[0])
    assert cosine_similarity(a, a) == pytest.approx(1.0, abs=1e-9)
    assert cosine_similarity(a, b) == cosine_similarity(b, a)
