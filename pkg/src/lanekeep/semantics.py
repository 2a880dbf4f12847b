"""Scene captions and a small LoRA-attention encoder producing the semantic vector.

Captions come from a closed template grammar filled from simulator ground
truth. The encoder follows the query/self-attention -> cross-attention ->
text self-attention layout at toy width with seeded random weights; the
mean-pool + projection head stands in for a language decoder.
"""

from __future__ import annotations

import itertools
import json
import math
import re
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from lanekeep.perception import LaneRaster
from lanekeep.sim.scene import Curvature, DistanceClass, Direction, SceneDescriptor

PAD, UNK = "<pad>", "<unk>"
CAPTION_LEN = 16

_ROAD = {
    Curvature.STRAIGHT: "straight road",
    Curvature.GENTLE: "gently curved road",
    Curvature.SHARP: "sharp curved road",
}
_DIST = {
    DistanceClass.NEAR: "near",
    DistanceClass.MID: "at mid distance",
    DistanceClass.FAR: "far ahead",
}

_WORDS = (
    "straight gently sharp curved road to the left right with without lane markings , "
    "no obstacles obstacle near at mid distance far ahead"
).split()
VOCAB: dict[str, int] = {w: i for i, w in enumerate([PAD, UNK] + _WORDS)}
INV_VOCAB = {i: w for w, i in VOCAB.items()}


def caption_text(desc: SceneDescriptor) -> str:
    road = _ROAD[desc.curvature_class]
    if desc.curve_direction is not Direction.NONE:
        road += f" to the {desc.curve_direction.value}"
    if not desc.obstacle_ahead:
        marks = "with lane markings" if desc.lane_marking_visible else "without lane markings"
        return f"{road} {marks}, no obstacles"
    text = f"{road} with obstacle {_DIST[desc.obstacle_distance_class]}"
    if not desc.lane_marking_visible:
        text += ", no lane markings"
    return text


_CAPTION_RE = re.compile(
    r"^(?P<road>straight road|gently curved road|sharp curved road)"
    r"(?: to the (?P<dir>left|right))?"
    r" (?:(?P<marks>with|without) lane markings, no obstacles"
    r"|with obstacle (?P<dist>near|at mid distance|far ahead)(?P<nomarks>, no lane markings)?)$"
)


def parse_caption(text: str) -> SceneDescriptor:
    m = _CAPTION_RE.match(text)
    if m is None:
        raise ValueError(f"caption outside the grammar: {text!r}")
    curv = {v: k for k, v in _ROAD.items()}[m["road"]]
    direction = Direction(m["dir"]) if m["dir"] else Direction.NONE
    if m["dist"]:
        dist = {v: k for k, v in _DIST.items()}[m["dist"]]
        return SceneDescriptor(curv, direction, True, dist, m["nomarks"] is None)
    return SceneDescriptor(curv, direction, False, DistanceClass.NONE, m["marks"] == "with")


def all_descriptors() -> list[SceneDescriptor]:
    """Every descriptor the classifier can emit."""
    out = []
    curves = [(Curvature.STRAIGHT, Direction.NONE)] + [
        (c, d) for c in (Curvature.GENTLE, Curvature.SHARP) for d in (Direction.LEFT, Direction.RIGHT)
    ]
    obstacles = [(False, DistanceClass.NONE)] + [
        (True, d) for d in (DistanceClass.NEAR, DistanceClass.MID, DistanceClass.FAR)
    ]
    for (c, d), (ahead, dist), vis in itertools.product(curves, obstacles, (True, False)):
        out.append(SceneDescriptor(c, d, ahead, dist, vis))
    return out


def tokenize(text: str, length: int = CAPTION_LEN) -> np.ndarray:
    words = text.replace(",", " ,").split()
    ids = [VOCAB.get(w, VOCAB[UNK]) for w in words][:length]
    return np.array(ids + [VOCAB[PAD]] * (length - len(ids)), dtype=np.int64)


def detokenize(ids) -> str:
    words = [INV_VOCAB[int(i)] for i in ids if int(i) != VOCAB[PAD]]
    return " ".join(words).replace(" ,", ",")


@dataclass(frozen=True)
class Caption:
    text: str
    token_ids: np.ndarray

    def __eq__(self, other):
        return (
            isinstance(other, Caption)
            and self.text == other.text
            and np.array_equal(self.token_ids, other.token_ids)
        )

    def __hash__(self):
        return hash(self.text)


def caption_from_scene(desc: SceneDescriptor) -> Caption:
    text = caption_text(desc)
    return Caption(text, tokenize(text))


def export_vocab(path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(VOCAB, fh, indent=1)


@dataclass
class AttentionBlock:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    a_q: np.ndarray | None = None  # (r, d)
    a_k: np.ndarray | None = None
    b_q: np.ndarray | None = None  # (d, r), zero at init
    b_k: np.ndarray | None = None

    @property
    def has_lora(self) -> bool:
        return self.a_q is not None


@dataclass
class EncoderWeights:
    token_embedding: np.ndarray  # (vocab, d)
    patch_proj: np.ndarray  # (patch*patch, d)
    patch_bias: np.ndarray  # (d,)
    query_self: AttentionBlock
    cross: AttentionBlock
    text_self: AttentionBlock
    q_learned: np.ndarray  # (m, d)
    out_proj: np.ndarray  # (d, d)
    patch: int = 16

    @property
    def d(self) -> int:
        return self.out_proj.shape[0]

    @property
    def rank(self) -> int:
        return self.query_self.a_q.shape[0]

    @classmethod
    def init(
        cls,
        seed: int = 0,
        d: int = 32,
        rank: int = 4,
        n_queries: int = 4,
        patch: int = 16,
        vocab_size: int = len(VOCAB),
    ) -> "EncoderWeights":
        if not rank < d:
            raise ValueError("LoRA rank must be below the feature width")
        rng = np.random.default_rng([seed, 0x5E3])
        s = 1.0 / math.sqrt(d)

        def block(lora: bool) -> AttentionBlock:
            w = [rng.normal(0.0, s, (d, d)) for _ in range(3)]
            if not lora:
                return AttentionBlock(*w)
            a_q, a_k = rng.normal(0.0, s, (rank, d)), rng.normal(0.0, s, (rank, d))
            return AttentionBlock(*w, a_q, a_k, np.zeros((d, rank)), np.zeros((d, rank)))

        return cls(
            token_embedding=rng.normal(0.0, 1.0, (vocab_size, d)),
            patch_proj=rng.normal(0.0, 1.0 / patch, (patch * patch, d)),
            patch_bias=rng.normal(0.0, 0.1, d),
            query_self=block(True),
            cross=block(False),
            text_self=block(True),
            q_learned=rng.normal(0.0, 1.0, (n_queries, d)),
            out_proj=rng.normal(0.0, s, (d, d)),
            patch=patch,
        )


def softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def encode_image_features(raster: LaneRaster | np.ndarray, weights: EncoderWeights) -> np.ndarray:
    """Non-overlapping patch embedding, (n_patches, d)."""
    pix = raster.pixels if isinstance(raster, LaneRaster) else np.asarray(raster, dtype=float)
    h, w = pix.shape
    p = weights.patch
    if h % p or w % p:
        raise ValueError(f"raster {h}x{w} is not divisible by patch size {p}")
    patches = pix.reshape(h // p, p, w // p, p).transpose(0, 2, 1, 3).reshape(-1, p * p)
    return patches @ weights.patch_proj + weights.patch_bias


def lora_attention(
    x: np.ndarray,
    blk: AttentionBlock,
    use_lora: bool = True,
    key_mask: np.ndarray | None = None,
    return_weights: bool = False,
):
    """Scaled dot-product self-attention with low-rank query/key adapters.

    Query/key projections are X (W + B A); with ``use_lora=False`` the adapters
    are skipped entirely.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite attention input")
    w_q, w_k = blk.w_q, blk.w_k
    if use_lora and blk.has_lora:
        w_q = w_q + blk.b_q @ blk.a_q
        w_k = w_k + blk.b_k @ blk.a_k
    return _attend(x @ w_q, x @ w_k, x @ blk.w_v, key_mask, return_weights)


def cross_attention(queries: np.ndarray, feats: np.ndarray, blk: AttentionBlock, return_weights=False):
    return _attend(queries @ blk.w_q, feats @ blk.w_k, feats @ blk.w_v, None, return_weights)


def _attend(q, k, v, key_mask, return_weights):
    scores = q @ k.T / math.sqrt(k.shape[1])
    if key_mask is not None:
        scores = np.where(key_mask[None, :], scores, -np.inf)
    attn = softmax_rows(scores)
    out = attn @ v
    return (out, attn) if return_weights else out


@dataclass(frozen=True)
class SemanticEmbedding:
    e: np.ndarray

    def __len__(self):
        return len(self.e)


def encode_semantics(
    caption: Caption,
    raster: LaneRaster | np.ndarray,
    weights: EncoderWeights,
    use_lora: bool = True,
    include_image: bool = True,
) -> SemanticEmbedding:
    q_ref = lora_attention(weights.q_learned, weights.query_self, use_lora)
    if include_image:
        v_img = encode_image_features(raster, weights)
        v_prime = cross_attention(q_ref, v_img, weights.cross)
    else:
        v_prime = np.zeros_like(q_ref)
    ids = caption.token_ids
    valid = ids != VOCAB[PAD]
    if not valid.any():
        valid = np.ones_like(valid)
    text = lora_attention(weights.token_embedding[ids], weights.text_self, use_lora, key_mask=valid)
    pooled = np.concatenate([text[valid], v_prime], axis=0).mean(axis=0)
    return SemanticEmbedding(pooled @ weights.out_proj)


@dataclass
class TokenCache:
    """Recomputes the embedding on steps divisible by ``period``, else replays it."""

    period: int = 10
    value: SemanticEmbedding | None = None
    recomputes: int = field(default=0)

    def __post_init__(self):
        if self.period < 1:
            raise ValueError("cache period must be >= 1")

    def get(self, step: int, recompute: Callable[[], SemanticEmbedding]) -> SemanticEmbedding:
        if step % self.period == 0 or self.value is None:
            self.value = recompute()
            self.recomputes += 1
        return self.value

    def reset(self) -> None:
        self.value = None


def token_cache(step: int, period: int, recompute: Callable[[], SemanticEmbedding], cache: TokenCache):
    if cache.period != period:
        raise ValueError("cache period mismatch")
    return cache.get(step, recompute)
