"""Synthetic chest-film corpus: images with planted glyphs, templated reports, labels.

Every study gets 0-3 finding classes. Each class owns one cell of a 4x4 layout
on the image, a glyph shape and an intensity. The report is a fixed-order
concatenation of "normal" sentences and one sentence per planted class; which
paraphrase is used is drawn from the study's rng and is also rendered into
the image (glyph size for findings, a marker patch for the normal sentences),
so the report is recoverable from the image alone.

Manifest layout (one JSON object per line, keys in this order):
``study_id`` (int), ``split`` ("train" | "val" | "test"), ``image`` (path of
an 8-bit PGM relative to the manifest), ``report`` (str), ``labels``
(string of 14 '0'/'1' characters).
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from .errors import ConfigError, ContractError, VocabularyError

logger = logging.getLogger(__name__)

N_LABELS = 14
NO_FINDING = 12
SUPPORT_DEVICE = 13

LABEL_NAMES = (
    "widened mediastinum", "cardiomegaly", "lung opacity", "lung lesion", "edema",
    "consolidation", "pneumonia", "atelectasis", "pneumothorax", "pleural effusion",
    "pleural other", "fracture", "no finding", "support device",
)

# class -> (keyword phrases, paraphrases indexed by glyph size)
FINDINGS: dict[int, tuple[tuple[str, ...], tuple[str, str, str]]] = {
    0: (("widened mediastinum", "mediastinum is widened", "mediastinal widening"),
        ("there is a widened mediastinum.", "the mediastinum is widened.", "mild mediastinal widening is noted.")),
    1: (("cardiomegaly", "heart is enlarged", "enlarged cardiac silhouette"),
        ("there is mild cardiomegaly.", "the heart is enlarged.", "an enlarged cardiac silhouette is seen.")),
    2: (("opacity", "opacities"),
        ("there is a focal opacity in the left lung.", "patchy opacities are present.",
         "an ill defined opacity is seen.")),
    3: (("nodule", "mass"),
        ("a small nodule is noted.", "there is a rounded mass.", "a pulmonary nodule is present.")),
    4: (("edema",),
        ("there is mild pulmonary edema.", "interstitial edema is present.",
         "findings suggest vascular congestion and edema.")),
    5: (("consolidation",),
        ("there is focal consolidation.", "consolidation is seen in the right base.",
         "dense consolidation is present.")),
    6: (("pneumonia",),
        ("findings are concerning for pneumonia.", "there is a right sided pneumonia.", "pneumonia is suspected.")),
    7: (("atelectasis",),
        ("there is bibasilar atelectasis.", "minimal atelectasis is noted.", "linear atelectasis is seen at the base.")),
    8: (("pneumothorax",),
        ("there is a small pneumothorax.", "a left apical pneumothorax is present.", "pneumothorax is identified.")),
    9: (("effusion", "effusions"),
        ("there is a small pleural effusion.", "bilateral pleural effusions are present.",
         "a moderate effusion is seen.")),
    10: (("pleural thickening", "pleural scarring"),
         ("there is apical pleural thickening.", "pleural scarring is noted.", "mild pleural thickening is present.")),
    11: (("fracture", "fractures"),
         ("there is a healed rib fracture.", "an acute rib fracture is seen.", "old fractures are noted.")),
    13: (("catheter", "tube", "pacemaker"),
         ("a central venous catheter is in place.", "an endotracheal tube is present.",
          "a cardiac pacemaker is seen.")),
}
GLYPH_CLASSES = tuple(sorted(FINDINGS))

# three shared normal-findings slots, three paraphrases each
NORMAL_SLOTS = (
    ("a frontal view of the chest was obtained.", "frontal radiograph of the chest is provided.",
     "single frontal chest image is available."),
    ("the trachea is midline.", "the trachea remains in the midline.", "midline trachea is seen."),
    ("no prior study for comparison.", "there are no prior images available.",
     "comparison is made with no prior exam."),
)

NEGATION_CUES = frozenset({"no", "without"})

# 4x4 layout: 13 glyph cells, 3 marker cells for the normal slots
_GLYPH_CELL = {c: i for i, c in enumerate(GLYPH_CLASSES)}
_MARKER_CELLS = (13, 14, 15)
_SHAPES = ("square", "frame", "plus", "cross", "hbar", "vbar", "diag", "anti",
           "corner", "tri", "checker", "dot", "ring")
_GLYPH_INTENSITY = {c: 0.6 + 0.4 * (i % 5) / 4 for i, c in enumerate(GLYPH_CLASSES)}
BACKGROUND = 0.1
NOISE = 0.02

_TOKEN_RE = re.compile(r"[a-z0-9]+|[^\sa-z0-9]")


def tokenize(text: str) -> list[str]:
    """Lowercase, isolate punctuation, split on whitespace."""
    return _TOKEN_RE.findall(text.lower())


def normalize(text: str) -> str:
    return " ".join(tokenize(text))


@dataclass
class SyntheticStudy:
    study_id: int
    image: np.ndarray  # (grid, grid), values k/255
    report: str
    labels: np.ndarray  # (14,) of 0/1
    split: str = ""


# -- rendering -----------------------------------------------------------------

def _shape_mask(shape: str, s: int) -> np.ndarray:
    i, j = np.mgrid[0:s, 0:s]
    mid = (s - 1) / 2
    band = max(1, s // 3)
    if shape == "square":
        m = np.ones((s, s), bool)
    elif shape == "frame":
        m = (i == 0) | (j == 0) | (i == s - 1) | (j == s - 1)
    elif shape == "plus":
        m = (np.abs(i - mid) < band / 2 + 0.5) | (np.abs(j - mid) < band / 2 + 0.5)
    elif shape == "cross":
        m = (i == j) | (i + j == s - 1)
    elif shape == "hbar":
        m = np.abs(i - mid) < band / 2 + 0.5
    elif shape == "vbar":
        m = np.abs(j - mid) < band / 2 + 0.5
    elif shape == "diag":
        m = np.abs(i - j) <= band // 2
    elif shape == "anti":
        m = np.abs(i + j - (s - 1)) <= band // 2
    elif shape == "corner":
        m = (i == s - 1) | (j == 0)
    elif shape == "tri":
        m = j <= i
    elif shape == "checker":
        m = (i + j) % 2 == 0
    elif shape == "dot":
        m = (i - mid) ** 2 + (j - mid) ** 2 <= (s / 3) ** 2 + 0.25
    else:  # ring
        r2 = (i - mid) ** 2 + (j - mid) ** 2
        m = (r2 <= (s / 2) ** 2 + 0.25) & (r2 >= (s / 2 - 1.2) ** 2)
    m = np.asarray(m, bool)
    if not m.any():
        m[s // 2, s // 2] = True
    return m


def glyph_sizes(grid: int) -> tuple[int, int, int]:
    cell = grid // 4
    return tuple(max(1, int(round(cell * f))) for f in (0.5, 0.75, 1.0))


def cell_box(cell: int, grid: int) -> tuple[slice, slice]:
    size = grid // 4
    r, c = divmod(cell, 4)
    return slice(r * size, (r + 1) * size), slice(c * size, (c + 1) * size)


def _paste(img: np.ndarray, cell: int, mask: np.ndarray, value: float) -> None:
    rows, cols = cell_box(cell, img.shape[0])
    size = rows.stop - rows.start
    s = mask.shape[0]
    off = (size - s) // 2
    block = img[rows.start + off:rows.start + off + s, cols.start + off:cols.start + off + s]
    block[mask] = value


def render_image(grid: int, findings: dict[int, int], normal_variant: Sequence[int],
                 rng: np.random.Generator) -> np.ndarray:
    img = BACKGROUND + NOISE * rng.standard_normal((grid, grid))
    sizes = glyph_sizes(grid)
    for cls, variant in findings.items():
        shape = _SHAPES[_GLYPH_CELL[cls]]
        _paste(img, _GLYPH_CELL[cls], _shape_mask(shape, sizes[variant]), _GLYPH_INTENSITY[cls])
    marker = sizes[1]
    for cell, v in zip(_MARKER_CELLS, normal_variant):
        _paste(img, cell, np.ones((marker, marker), bool), 0.25 + 0.2 * v)
    # quantise so a PGM round trip is lossless
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


# -- corpus ----------------------------------------------------------------------

def compose_report(findings: dict[int, int], normal_variant: Sequence[int]) -> str:
    parts = [NORMAL_SLOTS[0][normal_variant[0]], NORMAL_SLOTS[1][normal_variant[1]]]
    parts += [FINDINGS[c][1][v] for c, v in sorted(findings.items())]
    parts.append(NORMAL_SLOTS[2][normal_variant[2]])
    return " ".join(parts)


def labels_for(classes: Iterable[int]) -> np.ndarray:
    y = np.zeros(N_LABELS, dtype=np.int8)
    for c in classes:
        y[c] = 1
    if not y.any():
        y[NO_FINDING] = 1
    return y


def generate_study(seed: int, study_id: int, grid: int = 32, n_classes: int = N_LABELS) -> SyntheticStudy:
    rng = np.random.default_rng([seed, study_id])
    pool = [c for c in GLYPH_CLASSES if c < n_classes]
    k = int(rng.integers(0, 4))
    chosen = sorted(int(c) for c in rng.choice(pool, size=min(k, len(pool)), replace=False))
    findings = {c: int(rng.integers(0, 3)) for c in chosen}
    normal_variant = [int(v) for v in rng.integers(0, 3, size=3)]
    image = render_image(grid, findings, normal_variant, rng)
    return SyntheticStudy(study_id, image, compose_report(findings, normal_variant), labels_for(chosen))


def generate_corpus(seed: int, n: int, grid: int = 32, n_classes: int = N_LABELS) -> list[SyntheticStudy]:
    """Deterministic corpus of ``n`` studies; study ``i`` depends only on (seed, i)."""
    if n < 2:
        raise ContractError(f"corpus needs at least 2 studies (negatives are sampled), got {n}")
    if grid < 16 or grid % 4:
        raise ConfigError(f"grid must be a multiple of 4 and >= 16, got {grid}")
    if n_classes > N_LABELS:
        raise ConfigError(f"only {N_LABELS} label templates are available, asked for {n_classes}")
    studies = [generate_study(seed, i, grid, n_classes) for i in range(n)]
    splits = assign_splits([s.study_id for s in studies], seed)
    for s in studies:
        s.split = splits[s.study_id]
    return studies


def assign_splits(study_ids: Sequence[int], seed: int,
                  ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)) -> dict[int, str]:
    """Order studies by a seeded hash, then cut floor(n*train), floor(n*val), remainder."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {ratios}")
    n = len(study_ids)
    key = lambda sid: hashlib.blake2b(f"{seed}:{sid}".encode(), digest_size=8).digest()
    order = sorted(study_ids, key=key)
    n_train = math.floor(n * ratios[0] + 1e-9)
    n_val = math.floor(n * ratios[1] + 1e-9)
    out = {}
    for rank, sid in enumerate(order):
        out[sid] = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
    return out


# -- labeler ------------------------------------------------------------------------

def _sentences(tokens: list[str]) -> list[list[str]]:
    out, cur = [], []
    for tok in tokens:
        if tok == ".":
            if cur:
                out.append(cur)
            cur = []
        else:
            cur.append(tok)
    if cur:
        out.append(cur)
    return out


def keyword_labeler(report: str, templates: dict = FINDINGS) -> np.ndarray:
    """Rule labeler: a class fires on a keyword phrase not preceded by a negation cue
    in the same sentence. "No finding" fires iff nothing else does."""
    y = np.zeros(N_LABELS, dtype=np.int8)
    for sent in _sentences(tokenize(report)):
        for cls, (phrases, _) in templates.items():
            if y[cls]:
                continue
            for phrase in phrases:
                p = phrase.split()
                for start in range(len(sent) - len(p) + 1):
                    if sent[start:start + len(p)] == p and not NEGATION_CUES.intersection(sent[:start]):
                        y[cls] = 1
                        break
                if y[cls]:
                    break
    if not y.any():
        y[NO_FINDING] = 1
    return y


# -- vocabulary -----------------------------------------------------------------------

PAD, UNK, BOS, EOS = 0, 1, 2, 3
SPECIALS = ("<pad>", "<unk>", "<bos>", "<eos>")


class Vocabulary:
    """Token <-> id map. Ids 0-3 are PAD, UNK, BOS, EOS; BOS doubles as the encoder's CLS."""

    def __init__(self, tokens: Sequence[str], min_freq: int = 3):
        self.itos = list(SPECIALS) + [t for t in tokens if t not in SPECIALS]
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        self.min_freq = min_freq

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def lookup(self, idx: int) -> str:
        if not 0 <= idx < len(self.itos):
            raise VocabularyError(f"token id {idx} outside vocabulary of size {len(self.itos)}")
        return self.itos[idx]

    def to_list(self) -> list[str]:
        return list(self.itos)

    @classmethod
    def from_list(cls, itos: Sequence[str], min_freq: int = 3) -> Vocabulary:
        if tuple(itos[:4]) != SPECIALS:
            raise VocabularyError("vocabulary must start with the reserved special tokens")
        return cls(itos[4:], min_freq)


def build_vocab(reports: Sequence[str], min_freq: int = 3) -> Vocabulary:
    if not reports:
        raise ContractError("cannot build a vocabulary from an empty corpus")
    counts = Counter(tok for r in reports for tok in tokenize(r))
    kept = sorted(t for t, c in counts.items() if c >= min_freq)
    return Vocabulary(kept, min_freq)


def encode(report: str, vocab: Vocabulary, max_len: int = 60) -> list[int]:
    """[BOS, tokens..., EOS], truncated at the tail to ``max_len`` ids."""
    ids = [vocab.stoi.get(t, UNK) for t in tokenize(report)]
    if len(ids) + 2 > max_len:
        logger.warning("report of %d tokens truncated to max_len=%d", len(ids), max_len)
        ids = ids[:max_len - 2]
    return [BOS] + ids + [EOS]


def decode(ids: Iterable[int], vocab: Vocabulary) -> str:
    words = []
    for i in ids:
        i = int(i)
        if i == EOS:
            break
        if i in (PAD, BOS):
            continue
        words.append(vocab.lookup(i))
    return " ".join(words)


def pad_batch(seqs: Sequence[Sequence[int]], max_len: int | None = None) -> np.ndarray:
    """Right-pad with PAD (=0) to the longest sequence, capped at ``max_len``."""
    width = max(len(s) for s in seqs)
    if max_len is not None:
        width = min(width, max_len)
    out = np.zeros((len(seqs), width), dtype=np.int64)
    for r, s in enumerate(seqs):
        s = list(s)[:width]
        out[r, :len(s)] = s
    return out


# -- manifest I/O ------------------------------------------------------------------------

MANIFEST_FIELDS = ("study_id", "split", "image", "report", "labels")


def save_image(path: Path, image: np.ndarray) -> None:
    Image.fromarray(np.round(image * 255.0).astype(np.uint8)).save(path)


def load_image(path: str | Path, size: int | None = None, resize: bool = False) -> np.ndarray:
    with Image.open(path) as im:
        im = im.convert("L")
        if size is not None and im.size != (size, size):
            if not resize:
                raise ContractError(f"image {path} is {im.size[0]}x{im.size[1]}, expected {size}x{size}")
            im = im.resize((size, size), Image.BILINEAR)
        return np.asarray(im, dtype=np.float64) / 255.0


def write_manifest(studies: Sequence[SyntheticStudy], out_dir: str | Path) -> Path:
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    path = out / "manifest.jsonl"
    with path.open("w") as fh:
        for s in studies:
            rel = f"images/{s.study_id:06d}.pgm"
            save_image(out / rel, s.image)
            record = {"study_id": s.study_id, "split": s.split, "image": rel, "report": s.report,
                      "labels": "".join(str(int(v)) for v in s.labels)}
            fh.write(json.dumps(record) + "\n")
    return path


def read_manifest(path: str | Path) -> list[SyntheticStudy]:
    path = Path(path)
    studies = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                labels = np.array([int(ch) for ch in rec["labels"]], dtype=np.int8)
                if labels.shape != (N_LABELS,) or set(np.unique(labels)) - {0, 1}:
                    raise ValueError(f"bad label vector {rec['labels']!r}")
                image = load_image(path.parent / rec["image"])
                studies.append(SyntheticStudy(int(rec["study_id"]), image, rec["report"], labels, rec["split"]))
            except (KeyError, ValueError, OSError) as exc:
                raise ContractError(f"{path}:{lineno}: cannot parse manifest record ({exc})") from exc
    if not studies:
        raise ContractError(f"{path}: manifest is empty")
    return studies
