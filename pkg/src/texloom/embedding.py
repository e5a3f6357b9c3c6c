"""Shared linear conditioning space with deterministic toy embedders.

Text and image embedders project into one fixed-dimension space; both are
seeded and reproducible across runs, and both are drop-in replaceable by
real encoders behind the same call signatures. Image embeddings are left
unnormalized so scaling them by a strength factor is meaningful; text
embeddings are unit length.

Image feature layout (before projection): opponent color statistics. The
luma block (mean, 8-bin histogram, 4x4 pooled luma) projects to the first
40 embedding dimensions, the chroma block (means and 8-bin histograms of
R-G and B-Y) to the last 24, so the chroma content of an embedding is the
slice `CHROMA_SLICE`. Luma uses Rec.709 weights evaluated as
G + a*(R-G) + b*(B-G), which is exact on gray inputs, so a gray image has
exactly zero chroma features.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass

import numpy as np

SPACE_DIM = 64
LUMA_DIM = 40
CHROMA_SLICE = slice(LUMA_DIM, SPACE_DIM)

_HIST_BINS = 8
_POOL = 4
_N_FEATURES = 43  # 3 means + 3 * 8 bins + 16 pooled luma
_LUMA_IDX = np.array([0, *range(3, 11), *range(27, 43)])
_CHROMA_IDX = np.array([1, 2, *range(11, 27)])
# gray-reference chroma histogram: all mass in the bin containing zero
_ZERO_BIN = _HIST_BINS // 2

_EMPTY_TEXT_TAG = "__texloom_empty_prompt__"
_TOKEN = re.compile(r"[a-z0-9]+")


def _seeded_projection(tag: bytes, shape: tuple[int, int]) -> np.ndarray:
    seed = int.from_bytes(hashlib.blake2b(tag, digest_size=8).digest(), "little")
    mat = np.random.Generator(np.random.PCG64(seed)).standard_normal(shape)
    return mat / np.sqrt(shape[1])


_PROJ_LUMA = _seeded_projection(b"texloom-luma-block", (LUMA_DIM, len(_LUMA_IDX)))
_PROJ_CHROMA = _seeded_projection(
    b"texloom-chroma-block", (SPACE_DIM - LUMA_DIM, len(_CHROMA_IDX))
)


class EmbeddingError(ValueError):
    pass


@dataclass(frozen=True)
class Embedding:
    """A vector in the shared conditioning space, tagged by source modality."""

    values: np.ndarray
    modality: str  # "text" | "image"

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.shape != (SPACE_DIM,):
            raise EmbeddingError(f"embedding must have dimension {SPACE_DIM}, got {v.shape}")
        if not np.isfinite(v).all():
            raise EmbeddingError("non-finite embedding values")
        if self.modality not in ("text", "image"):
            raise EmbeddingError(f"unknown modality {self.modality!r}")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)


def _token_vector(token: str) -> np.ndarray:
    seed = int.from_bytes(hashlib.blake2b(token.encode(), digest_size=8).digest(), "little")
    return np.random.Generator(np.random.PCG64(seed)).standard_normal(SPACE_DIM)


def embed_text(prompt: str) -> Embedding:
    """Seeded bag-of-tokens embedding, L2 normalized.

    The empty prompt maps to a fixed canonical unit vector (the hash vector
    of an internal reserved tag), so "no prompt" is still a valid text slot.
    """
    tokens = _TOKEN.findall(prompt.lower())
    if not tokens:
        acc = _token_vector(_EMPTY_TEXT_TAG)
    else:
        acc = np.zeros(SPACE_DIM)
        for tok in tokens:
            acc = acc + _token_vector(tok)
        if np.linalg.norm(acc) < 1e-12:
            acc = _token_vector(_EMPTY_TEXT_TAG)
    return Embedding(values=acc / np.linalg.norm(acc), modality="text")


def luminance(image: np.ndarray) -> np.ndarray:
    """Rec.709 luma, evaluated so that gray inputs return exactly their value."""
    r, g, b = image[..., 0], image[..., 1], image[..., 2]
    return g + 0.2126 * (r - g) + 0.0722 * (b - g)


def image_features(image: np.ndarray) -> np.ndarray:
    """Raw 43-dim feature vector of an RGB image (documented layout).

    [0:3]   means of luma, R-G, B-luma
    [3:11]  8-bin histogram of luma over [0, 1]
    [11:19] 8-bin histogram of R-G over [-1, 1], gray reference subtracted
    [19:27] 8-bin histogram of B-luma over [-1, 1], gray reference subtracted
    [27:43] 4x4 average-pooled luma

    Gray inputs have exactly zero entries in every chroma slot.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = np.repeat(image[..., None], 3, axis=2)
    if image.ndim != 3 or image.shape[2] != 3 or image.shape[0] == 0 or image.shape[1] == 0:
        raise EmbeddingError(f"image must be non-empty HxWx3, got shape {image.shape}")

    y = luminance(image)
    c1 = image[..., 0] - image[..., 1]
    c2 = image[..., 2] - y

    f = np.zeros(_N_FEATURES)
    f[0] = y.mean()
    f[1] = c1.mean()
    f[2] = c2.mean()
    n = y.size
    f[3:11] = np.histogram(np.clip(y, 0.0, 1.0), bins=_HIST_BINS, range=(0.0, 1.0))[0] / n
    for k, c in ((11, c1), (19, c2)):
        h = np.histogram(np.clip(c, -1.0, 1.0), bins=_HIST_BINS, range=(-1.0, 1.0))[0] / n
        h[_ZERO_BIN] -= 1.0
        f[k : k + _HIST_BINS] = h

    hh, ww = y.shape
    re_ = np.floor(np.linspace(0, hh, _POOL + 1)).astype(int)
    ce = np.floor(np.linspace(0, ww, _POOL + 1)).astype(int)
    for i in range(_POOL):
        for j in range(_POOL):
            block = y[re_[i] : max(re_[i + 1], re_[i] + 1), ce[j] : max(ce[j + 1], ce[j] + 1)]
            f[27 + i * _POOL + j] = block.mean()
    return f


def embed_image(image: np.ndarray) -> Embedding:
    """Project image features into the shared space (block-diagonal, seeded).

    Not normalized: scaling the embedding by a strength factor scales its
    influence. The chroma features map onto `CHROMA_SLICE` only, so gray
    images have exactly zero values there.
    """
    f = image_features(image)
    out = np.zeros(SPACE_DIM)
    out[:LUMA_DIM] = _PROJ_LUMA @ f[_LUMA_IDX]
    out[CHROMA_SLICE] = _PROJ_CHROMA @ f[_CHROMA_IDX]
    return Embedding(values=out, modality="image")


def chroma_components(embedding: Embedding) -> np.ndarray:
    """The chroma-derived slice of an image embedding."""
    return embedding.values[CHROMA_SLICE]


def grayscale_negative(reference: np.ndarray) -> Embedding:
    """Embedding of the luma-replicated reference; used as a negative prompt
    to suppress the reference's structure while keeping its tones available
    in the positive prompt."""
    reference = np.asarray(reference, dtype=np.float64)
    y = luminance(reference if reference.ndim == 3 else np.repeat(reference[..., None], 3, 2))
    return embed_image(np.repeat(y[..., None], 3, axis=2))


_WHITE_RESOLUTION = 64


def white_negative() -> Embedding:
    """Embedding of an all-white 64x64 image (default negative prompt)."""
    return embed_image(np.ones((_WHITE_RESOLUTION, _WHITE_RESOLUTION, 3)))


# ---------------------------------------------------------------------------
# Aggregation


@dataclass(frozen=True)
class Condition:
    """What a velocity model sees: the two positive slots plus the opaque
    distilled guidance scale forwarded to backbone-specific models."""

    text: np.ndarray
    image: np.ndarray
    distilled_scale: float = 6.0


@dataclass(frozen=True)
class ConditionBundle:
    """Ordered two-slot positive condition (text, summed image embeddings)
    plus the negative embedding used for guidance."""

    text: Embedding
    image_slot: np.ndarray
    alphas: tuple[float, ...]
    negative: Embedding

    @property
    def positive(self) -> tuple[np.ndarray, np.ndarray]:
        return self.text.values, self.image_slot

    def positive_condition(self, distilled_scale: float = 6.0) -> Condition:
        return Condition(self.text.values, self.image_slot, distilled_scale)

    def negative_condition(self, distilled_scale: float = 6.0) -> Condition:
        return Condition(embed_text("").values, self.negative.values, distilled_scale)


def aggregate(
    text: Embedding,
    images: list[tuple[float, Embedding]] = (),
    negative: Embedding | None = None,
) -> ConditionBundle:
    """Combine a text embedding with strength-scaled image embeddings.

    The image slot is the linear combination sum(alpha_i * e_i); with every
    alpha zero the conditioning is text-only. The negative defaults to the
    white-image embedding.
    """
    if text.modality != "text":
        raise EmbeddingError(f"text slot got a {text.modality!r} embedding")
    slot = np.zeros(SPACE_DIM)
    alphas = []
    for alpha, emb in images:
        if emb.modality != "image":
            raise EmbeddingError(f"image slot got a {emb.modality!r} embedding")
        if not np.isfinite(alpha):
            raise EmbeddingError(f"non-finite image strength {alpha}")
        slot = slot + alpha * emb.values
        alphas.append(float(alpha))
    if negative is None:
        negative = white_negative()
    return ConditionBundle(
        text=text, image_slot=slot, alphas=tuple(alphas), negative=negative
    )
