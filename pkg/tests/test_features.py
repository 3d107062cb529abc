import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from lodloc.errors import DimensionMismatchError, EmptySetError, ImageTooSmallError, MissingMaskError, ThresholdError
from lodloc.features import (
    BACKGROUND,
    FEATURE_MARK,
    MatchParams,
    Method,
    apply_mask,
    build_feature_image,
    canny,
    detect_and_describe,
    hamming_matrix,
    match_descriptors,
    match_pipeline,
    sobel,
)


def _squares(n=4, size=18, gap=22, margin=40, lo=40, hi=200):
    side = 2 * margin + n * size + (n - 1) * gap
    img = np.full((side, side), float(lo))
    corners = []
    for i in range(n):
        for j in range(n):
            y0, x0 = margin + i * (size + gap), margin + j * (size + gap)
            img[y0 : y0 + size, x0 : x0 + size] = hi
            for cy in (y0, y0 + size - 1):
                for cx in (x0, x0 + size - 1):
                    corners.append((cx, cy))
    return img, np.array(corners, float)


def _texture(shape=(160, 200), seed=0):
    rng = np.random.default_rng(seed)
    return np.clip(ndimage.gaussian_filter(rng.uniform(0, 255, shape), 2.0) * 4 - 384, 0, 255)


def test_uniform_image_has_no_keypoints():
    kp, desc = detect_and_describe(np.full((100, 100), 128.0))
    assert len(kp) == 0 and desc.shape == (0, 32)


def test_image_too_small():
    with pytest.raises(ImageTooSmallError):
        detect_and_describe(np.zeros((20, 200)))


def test_square_corners_detected():
    img, corners = _squares()
    kp, _ = detect_and_describe(img, max_features=500)
    d = np.linalg.norm(corners[:, None] - kp.xy[None], axis=2).min(axis=1)
    assert np.all(d <= 2.0)


def test_descriptor_rotation_robust():
    img = _texture((200, 200), seed=4)
    kp, desc = detect_and_describe(img, n_levels=1)
    rot = np.rot90(img)
    kr, dr = detect_and_describe(rot, n_levels=1)
    # np.rot90 maps (x, y) to (y, W - 1 - x)
    mapped = np.column_stack([kp.xy[:, 1], img.shape[1] - 1 - kp.xy[:, 0]])
    dist = np.linalg.norm(mapped[:, None] - kr.xy[None], axis=2)
    i, j = np.nonzero(dist < 0.5)
    assert len(i) >= 10
    H = hamming_matrix(desc[i], dr[j]).diagonal()
    assert np.median(H) <= 64


def test_self_match_is_identity():
    kp, desc = detect_and_describe(_texture(seed=1))
    assert len(kp) > 20
    m = match_descriptors(desc, desc)
    assert np.all(m.pairs[:, 0] == m.pairs[:, 1])
    assert np.all(m.distance == 0)


def test_random_descriptors_rarely_match(rng):
    a = rng.integers(0, 256, (400, 32), dtype=np.uint8)
    b = rng.integers(0, 256, (400, 32), dtype=np.uint8)
    assert len(match_descriptors(a, b)) < 0.05 * 400


def test_subset_matches_its_copy(rng):
    a = rng.integers(0, 256, (200, 32), dtype=np.uint8)
    idx = rng.permutation(200)[:80]
    m = match_descriptors(a[idx], a)
    assert m.as_set() == {(k, int(i)) for k, i in enumerate(idx)}


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 60), st.integers(2, 60))
def test_cross_check_is_symmetric(seed, na, nb):
    rng = np.random.default_rng(seed)
    base = rng.integers(0, 256, (max(na, nb), 32), dtype=np.uint8)
    a = base[:na] ^ (rng.random((na, 32)) < 0.05).astype(np.uint8)
    b = base[:nb]
    ab = match_descriptors(a, b).as_set()
    ba = {(j, i) for i, j in match_descriptors(b, a).as_set()}
    assert ab == ba


def test_hamming_matrix_bit_count(rng):
    a = rng.integers(0, 256, (5, 32), dtype=np.uint8)
    b = rng.integers(0, 256, (7, 32), dtype=np.uint8)
    want = np.unpackbits(a[:, None] ^ b[None], axis=2).sum(axis=2)
    np.testing.assert_array_equal(hamming_matrix(a, b), want)


def test_empty_descriptor_set():
    with pytest.raises(EmptySetError):
        match_descriptors(np.zeros((0, 32), np.uint8), np.zeros((3, 32), np.uint8))


def test_feature_image_marks():
    img = _texture(seed=2)
    out, n = build_feature_image(img)
    assert out.dtype == np.uint8
    assert set(np.unique(out)) <= {BACKGROUND, FEATURE_MARK}
    assert 0 < (out == FEATURE_MARK).sum() <= n


def test_feature_image_uniform_input():
    out, n = build_feature_image(np.full((80, 90), 77.0))
    assert n == 0 and np.all(out == BACKGROUND)


def test_sobel_step_edge():
    img = np.zeros((40, 40))
    img[:, 20:] = 200
    s = sobel(img)
    assert s.dtype == np.uint8 and s.max() == 255
    assert np.all(s[:, 19:21] == 255)
    assert np.all(s[:, :18] == 0) and np.all(s[:, 22:] == 0)


def test_filters_on_constant_image():
    img = np.full((50, 60), 90.0)
    assert np.all(sobel(img) == 0)
    assert np.all(canny(img) == 0)


def test_canny_step_edge_is_thin():
    img = np.zeros((40, 40))
    img[:, 20:] = 200
    e = canny(img)
    assert set(np.unique(e)) == {0, 255}
    cols = np.unique(np.nonzero(e)[1])
    assert len(cols) == 1 and cols[0] in (19, 20)
    assert (e[:, cols[0]] == 255).all()


def test_canny_thresholds():
    with pytest.raises(ThresholdError):
        canny(np.zeros((10, 10)), low=150, high=50)
    with pytest.raises(ThresholdError):
        canny(np.zeros((10, 10)), low=80, high=80)


def test_apply_mask():
    img = np.arange(12, dtype=np.uint8).reshape(3, 4) + 100
    all_b = np.full((3, 4), 255, np.uint8)
    np.testing.assert_array_equal(apply_mask(img, all_b), img)
    assert np.all(apply_mask(img, np.zeros((3, 4), np.uint8)) == BACKGROUND)
    with pytest.raises(DimensionMismatchError):
        apply_mask(img, np.zeros((4, 3), np.uint8))


def test_mask_restricts_keypoints():
    img = _texture(seed=3)
    mask = np.zeros(img.shape, np.uint8)
    mask[:, : img.shape[1] // 2] = 255
    full, _ = detect_and_describe(img)
    masked, _ = detect_and_describe(img, mask=mask == 255)
    assert 0 < len(masked) <= len(full)
    px = np.rint(masked.xy).astype(int)
    assert np.all(mask[px[:, 1], px[:, 0]] == 255)


def test_mask_methods_need_a_mask():
    img = _texture(seed=5)
    for m in (Method.Mask, Method.MaskSobel, Method.MaskCanny):
        with pytest.raises(MissingMaskError):
            match_pipeline(img, img, None, m)


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        match_pipeline(np.zeros((60, 60)), np.zeros((60, 61)), method=Method.Direct)


def test_direct_identical_pair():
    img = _texture(seed=6)
    m = match_pipeline(img, img, method=Method.Direct)
    assert len(m) > 20
    np.testing.assert_array_equal(m.coordinates()[:, :2], m.coordinates()[:, 2:])


def test_method_parse():
    assert Method.parse("mask-canny") is Method.MaskCanny
    assert Method.parse("FeatureImages") is Method.FeatureImages
    with pytest.raises(ValueError):
        Method.parse("nope")


def test_feature_images_on_lod3_pair(street_pair):
    real, virtual, *_ = street_pair
    m = match_pipeline(real, virtual, method=Method.FeatureImages)
    assert len(m) >= 6


@pytest.mark.parametrize("method", list(Method))
def test_pipeline_deterministic(street_pair, method):
    real, virtual, mask, *_ = street_pair
    a = match_pipeline(real, virtual, mask, method, MatchParams(max_features=300))
    b = match_pipeline(real, virtual, mask, method, MatchParams(max_features=300))
    np.testing.assert_array_equal(a.pairs, b.pairs)
    np.testing.assert_array_equal(a.coordinates(), b.coordinates())
