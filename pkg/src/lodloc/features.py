"""ORB-style features, matching and the seven matching variants.

Detector: FAST-9 on a 3-level pyramid (scale 1.2), Harris ranking with 3x3
non-maximum suppression, intensity-centroid orientation, and a 256-bit
rotated intensity-comparison descriptor whose sampling pattern is drawn
once from a fixed seed.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import (
    DimensionMismatchError,
    EmptySetError,
    ImageTooSmallError,
    MissingMaskError,
    ThresholdError,
)

FAST_THRESHOLD = 20
FAST_ARC = 9
HARRIS_K = 0.04
PATCH_RADIUS = 15
BORDER = PATCH_RADIUS + 1
N_LEVELS = 3
SCALE_FACTOR = 1.2
DESCRIPTOR_BITS = 256
PATTERN_SEED = 20240101
BUILDING_LABEL = 255
BACKGROUND = 0
FEATURE_MARK = 255

# Bresenham circle of radius 3, clockwise from 12 o'clock (y down)
CIRCLE = np.array(
    [(0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
     (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3)]
)


def _make_pattern(seed=PATTERN_SEED, n=DESCRIPTOR_BITS, radius=PATCH_RADIUS - 2):
    rng = np.random.default_rng(seed)
    pts = []
    while len(pts) < 2 * n:
        p = rng.normal(0.0, 31.0 / 5.0, 2)
        if np.hypot(*p) <= radius:
            pts.append(p)
    return np.array(pts).reshape(n, 2, 2)


# (256, 2, 2): pairs of (x, y) offsets; frozen at import from a fixed seed
PATTERN = _make_pattern()
PATTERN.setflags(write=False)

_yy, _xx = np.mgrid[-PATCH_RADIUS : PATCH_RADIUS + 1, -PATCH_RADIUS : PATCH_RADIUS + 1]
_DISC = np.column_stack([_xx.ravel(), _yy.ravel()])
_DISC = _DISC[np.hypot(_DISC[:, 0], _DISC[:, 1]) <= PATCH_RADIUS]


class Method(enum.Enum):
    Direct = "direct"
    FeatureImages = "feature-images"
    Sobel = "sobel"
    Canny = "canny"
    Mask = "mask"
    MaskSobel = "mask-sobel"
    MaskCanny = "mask-canny"

    @property
    def needs_mask(self) -> bool:
        return self in (Method.Mask, Method.MaskSobel, Method.MaskCanny)

    @classmethod
    def parse(cls, s) -> "Method":
        if isinstance(s, cls):
            return s
        for m in cls:
            if s in (m.value, m.name):
                return m
        raise ValueError(f"unknown method {s!r}")


# Table row labels used in reports
METHOD_LABELS = {
    Method.Direct: "Corresponding images",
    Method.FeatureImages: "Feature images",
    Method.Sobel: "Sobel-filter",
    Method.Canny: "Canny edge detection",
    Method.Mask: "Mask",
    Method.MaskSobel: "Mask and Sobel-filter",
    Method.MaskCanny: "Mask and Canny edge detection",
}


@dataclass(frozen=True, eq=False)
class Keypoints:
    """Rows are keypoints: sub-pixel ``xy`` (level-0 pixels), response, orientation (rad)."""

    xy: np.ndarray
    response: np.ndarray
    angle: np.ndarray
    level: np.ndarray

    def __len__(self):
        return len(self.xy)

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 2)), np.zeros(0), np.zeros(0), np.zeros(0, dtype=int))


@dataclass(frozen=True, eq=False)
class MatchSet:
    pairs: np.ndarray  # (k, 2) int indices into A and B
    distance: np.ndarray  # (k,) Hamming distances
    method: Method = Method.Direct
    keypoints_a: Keypoints = field(default=None, repr=False)
    keypoints_b: Keypoints = field(default=None, repr=False)

    def __len__(self):
        return len(self.pairs)

    def as_set(self):
        return {(int(i), int(j)) for i, j in self.pairs}

    def coordinates(self) -> np.ndarray:
        """(k, 4) array xA, yA, xB, yB."""
        if not len(self):
            return np.zeros((0, 4))
        a = self.keypoints_a.xy[self.pairs[:, 0]]
        b = self.keypoints_b.xy[self.pairs[:, 1]]
        return np.hstack([a, b])


def as_gray(img) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim == 3:
        img = 0.299 * img[..., 0] + 0.587 * img[..., 1] + 0.114 * img[..., 2]
    return np.clip(img, 0, 255).astype(float)


# ---------------------------------------------------------------- detector


def fast_corners(img: np.ndarray, threshold: float = FAST_THRESHOLD, arc: int = FAST_ARC) -> np.ndarray:
    """Boolean map of FAST corners (``arc`` contiguous circle pixels all brighter or all darker)."""
    I = np.asarray(img, dtype=float)
    H, W = I.shape
    out = np.zeros((H, W), dtype=bool)
    if H < 7 or W < 7:
        return out
    c = I[3 : H - 3, 3 : W - 3]
    ring = np.stack([I[3 + dy : H - 3 + dy, 3 + dx : W - 3 + dx] for dx, dy in CIRCLE])
    for flags in (ring > c + threshold, ring < c - threshold):
        ext = np.concatenate([flags, flags[: arc - 1]])
        run = ext[:16].copy()
        for j in range(1, arc):
            run &= ext[j : j + 16]
        out[3 : H - 3, 3 : W - 3] |= run.any(axis=0)
    return out


def harris_response(img: np.ndarray, sigma: float = 1.0, k: float = HARRIS_K) -> np.ndarray:
    I = np.asarray(img, dtype=float)
    gx = ndimage.sobel(I, axis=1, mode="nearest")
    gy = ndimage.sobel(I, axis=0, mode="nearest")
    sxx = ndimage.gaussian_filter(gx * gx, sigma)
    syy = ndimage.gaussian_filter(gy * gy, sigma)
    sxy = ndimage.gaussian_filter(gx * gy, sigma)
    return sxx * syy - sxy * sxy - k * (sxx + syy) ** 2


def _orientation(I, pts):
    xs = pts[:, 0, None] + _DISC[None, :, 0]
    ys = pts[:, 1, None] + _DISC[None, :, 1]
    v = I[ys, xs]
    m10 = (v * _DISC[None, :, 0]).sum(axis=1)
    m01 = (v * _DISC[None, :, 1]).sum(axis=1)
    return np.arctan2(m01, m10)


def _describe(smooth, pts, angles):
    c, s = np.cos(angles)[:, None, None], np.sin(angles)[:, None, None]
    px, py = PATTERN[None, :, :, 0], PATTERN[None, :, :, 1]
    rx = np.rint(c * px - s * py).astype(int) + pts[:, 0, None, None]
    ry = np.rint(s * px + c * py).astype(int) + pts[:, 1, None, None]
    v = smooth[ry, rx]
    bits = v[:, :, 0] < v[:, :, 1]
    return np.packbits(bits, axis=1)


def _detect_level(I, quota, threshold, mask=None):
    H, W = I.shape
    corners = fast_corners(I, threshold)
    corners[:BORDER] = corners[-BORDER:] = False
    corners[:, :BORDER] = corners[:, -BORDER:] = False
    if mask is not None:
        corners &= mask
    if not corners.any():
        return np.zeros((0, 2), int), np.zeros(0)
    R = harris_response(I)
    Rc = np.where(corners, R, -np.inf)
    peak = corners & (Rc == ndimage.maximum_filter(Rc, size=3, mode="constant", cval=-np.inf))
    ys, xs = np.nonzero(peak)
    resp = R[ys, xs]
    order = np.lexsort((xs, ys, -resp))[:quota]
    return np.column_stack([xs[order], ys[order]]), resp[order]


def detect_and_describe(img, max_features: int = 500, mask=None, n_levels: int = N_LEVELS,
                        threshold: float = FAST_THRESHOLD):
    """ORB-style keypoints (sorted by Harris response) and packed 256-bit descriptors.

    ``mask``: optional boolean array; keypoints are kept only where it is true.
    """
    I0 = as_gray(img)
    if I0.shape[0] < 2 * PATCH_RADIUS + 2 or I0.shape[1] < 2 * PATCH_RADIUS + 2:
        raise ImageTooSmallError(f"image {I0.shape} smaller than {2 * PATCH_RADIUS + 2} px")
    weights = SCALE_FACTOR ** (-2.0 * np.arange(n_levels))
    quotas = np.maximum(1, np.floor(max_features * weights / weights.sum())).astype(int)
    xy, resp, ang, lvl, desc = [], [], [], [], []
    for level in range(n_levels):
        scale = SCALE_FACTOR**level
        I = I0 if level == 0 else ndimage.zoom(I0, 1.0 / scale, order=1, mode="nearest")
        if min(I.shape) < 2 * BORDER + 1:
            break
        m = None
        if mask is not None:
            m = mask if level == 0 else ndimage.zoom(mask.astype(float), 1.0 / scale, order=0) > 0.5
            m = m[: I.shape[0], : I.shape[1]]
        pts, r = _detect_level(I, int(quotas[level]), threshold, m)
        if not len(pts):
            continue
        a = _orientation(I, pts)
        smooth = ndimage.gaussian_filter(I, 2.0, mode="nearest")
        xy.append(pts * scale)
        resp.append(r)
        ang.append(a)
        lvl.append(np.full(len(pts), level))
        desc.append(_describe(smooth, pts, a))
    if not xy:
        return Keypoints.empty(), np.zeros((0, DESCRIPTOR_BITS // 8), np.uint8)
    xy, resp, ang, lvl, desc = (np.concatenate(v) for v in (xy, resp, ang, lvl, desc))
    if mask is not None:
        # level rescaling can move a point off the mask; enforce at level 0
        r = np.clip(np.rint(xy).astype(int), 0, [I0.shape[1] - 1, I0.shape[0] - 1])
        ok = mask[r[:, 1], r[:, 0]]
        xy, resp, ang, lvl, desc = xy[ok], resp[ok], ang[ok], lvl[ok], desc[ok]
    order = np.lexsort((lvl, xy[:, 0], xy[:, 1], -resp))[:max_features]
    kp = Keypoints(xy[order].astype(float), resp[order], ang[order], lvl[order])
    return kp, desc[order]


# ----------------------------------------------------------------- matcher


def hamming_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    A = np.unpackbits(np.asarray(a, np.uint8), axis=1).astype(np.float32)
    B = np.unpackbits(np.asarray(b, np.uint8), axis=1).astype(np.float32)
    return (A @ (1.0 - B).T + (1.0 - A) @ B.T).astype(np.int32)


def _ratio_best(D, ratio):
    best = np.argmin(D, axis=1)
    d1 = D[np.arange(len(D)), best]
    if D.shape[1] > 1:
        d2 = np.partition(D, 1, axis=1)[:, 1]
        ok = d1 < ratio * d2
    else:
        ok = np.ones(len(D), bool)
    return best, d1, ok


def match_descriptors(a, b, ratio: float = 0.75, cross_check: bool = True) -> MatchSet:
    """Hamming nearest neighbour with Lowe ratio test, mutually cross-checked."""
    if len(a) == 0 or len(b) == 0:
        raise EmptySetError("cannot match an empty descriptor set")
    D = hamming_matrix(a, b)
    ab, d_ab, ok_ab = _ratio_best(D, ratio)
    keep = ok_ab.copy()
    if cross_check:
        ba, _, ok_ba = _ratio_best(D.T, ratio)
        keep &= (ba[ab] == np.arange(len(D))) & ok_ba[ab]
    i = np.flatnonzero(keep)
    return MatchSet(np.column_stack([i, ab[i]]).astype(int).reshape(-1, 2), d_ab[i].astype(int))


# ------------------------------------------------------------ image filters


def sobel(img) -> np.ndarray:
    """3x3 Sobel gradient magnitude scaled to [0, 255]."""
    I = as_gray(img)
    mag = np.hypot(ndimage.sobel(I, axis=1, mode="nearest"), ndimage.sobel(I, axis=0, mode="nearest"))
    top = mag.max()
    if top <= 0:
        return np.zeros(I.shape, np.uint8)
    return np.clip(np.rint(mag * (255.0 / top)), 0, 255).astype(np.uint8)


def canny(img, low: float = 50.0, high: float = 150.0) -> np.ndarray:
    """Binary edge map (0/255): Sobel gradient, non-maximum suppression, hysteresis."""
    if low >= high:
        raise ThresholdError(f"low threshold {low} must be below high threshold {high}")
    I = as_gray(img)
    gx = ndimage.sobel(I, axis=1, mode="nearest")
    gy = ndimage.sobel(I, axis=0, mode="nearest")
    mag = np.hypot(gx, gy)
    H, W = I.shape
    ang = np.mod(np.rad2deg(np.arctan2(gy, gx)), 180.0)
    sector = (np.floor((ang + 22.5) / 45.0).astype(int)) % 4
    # neighbour offsets (dy, dx) along the gradient for sectors 0, 45, 90, 135 degrees
    offs = [(0, 1), (1, 1), (1, 0), (1, -1)]
    pad = np.pad(mag, 1, mode="constant")
    keep = np.zeros_like(mag, dtype=bool)
    for s, (dy, dx) in enumerate(offs):
        fwd = pad[1 + dy : H + 1 + dy, 1 + dx : W + 1 + dx]
        bwd = pad[1 - dy : H + 1 - dy, 1 - dx : W + 1 - dx]
        # asymmetric tie-break keeps one pixel of a two-pixel plateau
        keep |= (sector == s) & (mag > bwd) & (mag >= fwd)
    nms = np.where(keep, mag, 0.0)
    strong = nms >= high
    weak = nms >= low
    labels, n = ndimage.label(weak, structure=np.ones((3, 3)))
    if n == 0:
        return np.zeros((H, W), np.uint8)
    has_strong = np.zeros(n + 1, bool)
    has_strong[np.unique(labels[strong])] = True
    has_strong[0] = False
    return np.where(has_strong[labels], 255, 0).astype(np.uint8)


def apply_mask(img, mask, building_label: int = BUILDING_LABEL, background: int = BACKGROUND) -> np.ndarray:
    img = np.asarray(img)
    mask = np.asarray(mask)
    if img.shape[:2] != mask.shape[:2]:
        raise DimensionMismatchError(f"image {img.shape[:2]} vs mask {mask.shape[:2]}")
    if mask.ndim == 3:
        mask = mask[..., 0]
    out = img.copy()
    out[mask != building_label] = background
    return out


def build_feature_image(img, max_features: int = 500, ratio: float = 0.75, presmooth_sigma: float = 0.0):
    """Constant image with one marked pixel per self-matched feature.

    Returns (feature image, number of self-matches).
    """
    I = as_gray(img)
    if presmooth_sigma > 0:
        I = ndimage.gaussian_filter(I, presmooth_sigma)
    out = np.full(I.shape, BACKGROUND, np.uint8)
    kp, desc = detect_and_describe(I, max_features)
    if len(kp) == 0:
        return out, 0
    self_matches = match_descriptors(desc, desc, ratio)
    xy = kp.xy[self_matches.pairs[:, 0]]
    px = np.clip(np.rint(xy).astype(int), 0, [I.shape[1] - 1, I.shape[0] - 1])
    out[px[:, 1], px[:, 0]] = FEATURE_MARK
    return out, len(self_matches)


# ---------------------------------------------------------------- pipeline


@dataclass(frozen=True)
class MatchParams:
    max_features: int = 500
    ratio: float = 0.75
    canny_low: float = 50.0
    canny_high: float = 150.0
    presmooth_sigma: float = 0.0
    building_label: int = BUILDING_LABEL
    mask_virtual: bool = False


def _detect_match(a, b, params, method, mask_a=None, mask_b=None) -> MatchSet:
    kpa, da = detect_and_describe(a, params.max_features, mask_a)
    kpb, db = detect_and_describe(b, params.max_features, mask_b)
    if len(kpa) == 0 or len(kpb) == 0:
        return MatchSet(np.zeros((0, 2), int), np.zeros(0, int), method, kpa, kpb)
    m = match_descriptors(da, db, params.ratio)
    return MatchSet(m.pairs, m.distance, method, kpa, kpb)


def match_pipeline(real, virtual, mask=None, method=Method.FeatureImages, params: MatchParams = None) -> MatchSet:
    """Run one matching variant; set A is the real image, set B the virtual one."""
    method = Method.parse(method)
    params = params or MatchParams()
    a, b = as_gray(real), as_gray(virtual)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"real {a.shape} vs virtual {b.shape}")
    mask_a = mask_b = None
    if method.needs_mask:
        if mask is None:
            raise MissingMaskError(f"method {method.value} requires a segmentation mask")
        a = apply_mask(a, mask, params.building_label).astype(float)
        mask_a = np.asarray(mask)[..., 0] if np.ndim(mask) == 3 else np.asarray(mask)
        mask_a = mask_a == params.building_label
        if params.mask_virtual:
            b = apply_mask(b, mask, params.building_label).astype(float)
            mask_b = mask_a
    if method == Method.FeatureImages:
        a, _ = build_feature_image(a, params.max_features, params.ratio, params.presmooth_sigma)
        b, _ = build_feature_image(b, params.max_features, params.ratio, params.presmooth_sigma)
    elif method in (Method.Sobel, Method.MaskSobel):
        a, b = sobel(a), sobel(b)
    elif method in (Method.Canny, Method.MaskCanny):
        a, b = canny(a, params.canny_low, params.canny_high), canny(b, params.canny_low, params.canny_high)
    return _detect_match(a, b, params, method, mask_a, mask_b)
