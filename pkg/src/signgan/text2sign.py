"""Sentence -> sign image sequence, and the classifier round trip back to text."""
from __future__ import annotations

import json
import os
import string
from dataclasses import asdict, dataclass
from importlib import resources

import numpy as np

from .autodiff import no_grad

BLACK = "<black>"
LETTERS = tuple(string.ascii_lowercase)
DIGITS = tuple(string.digits)
KINDS = ("word", "letter", "digit")
_PUNCT = set(string.punctuation)


class VocabularyError(ValueError):
    pass


class UnrenderableError(ValueError):
    """A token contains a character with no class; carries every offending position."""

    def __init__(self, problems):
        self.problems = problems  # [(token_index, char_index, char, token)]
        desc = "; ".join(f"token {t} {tok!r} char {c} {ch!r}" for t, c, ch, tok in problems)
        super().__init__(f"unrenderable characters: {desc}")


class ClassVocabulary:
    """Token -> class id, with separate word, letter and digit tables.

    Ids are contiguous in insertion order. Lookups are case-insensitive.
    """

    def __init__(self, entries):
        self.entries = []  # (kind, token), index == class id
        self._maps = {k: {} for k in KINDS}
        for kind, token in entries:
            if kind not in KINDS:
                raise VocabularyError(f"unknown kind {kind!r}")
            token = token.strip().lower()
            if not token:
                raise VocabularyError("empty token")
            if kind == "letter" and token not in LETTERS:
                raise VocabularyError(f"letter entry {token!r} is not a-z")
            if kind == "digit" and token not in DIGITS:
                raise VocabularyError(f"digit entry {token!r} is not 0-9")
            if token in self._maps[kind]:
                raise VocabularyError(f"duplicate {kind} {token!r}")
            self._maps[kind][token] = len(self.entries)
            self.entries.append((kind, token))

    @classmethod
    def from_file(cls, path):
        entries = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                parts = line.split()
                if len(parts) != 2:
                    raise VocabularyError(f"{path}:{lineno}: expected '<kind> <token>'")
                entries.append((parts[0], parts[1]))
        return cls(entries)

    @classmethod
    def desk(cls):
        """The shipped three-word shape vocabulary."""
        with resources.as_file(resources.files("signgan.data") / "desk_vocab.txt") as p:
            return cls.from_file(p)

    @classmethod
    def isl(cls, words):
        """Full label space: the given words, then a-z, then 0-9."""
        words = list(words)
        if len(words) != 129:
            raise VocabularyError(f"expected 129 words, got {len(words)}")
        return cls([("word", w) for w in words] + [("letter", c) for c in LETTERS]
                   + [("digit", d) for d in DIGITS])

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for kind, token in self.entries:
                fh.write(f"{kind} {token}\n")

    def __len__(self):
        return len(self.entries)

    @property
    def size(self):
        return len(self.entries)

    def lookup(self, kind, token):
        return self._maps[kind].get(token.lower())

    def token(self, class_id):
        return self.entries[class_id]

    @property
    def class_names(self):
        """Directory names of the dataset layout, in id order."""
        return tuple(tok for _, tok in self.entries)


# ------------------------------------------------------------------ planning

def _scan(sentence):
    """Yield (token, offset); BLACK for each punctuation mark and each inter-word gap."""
    out = []
    i, n = 0, len(sentence)
    pending_gap = False
    while i < n:
        ch = sentence[i]
        if ch.isspace():
            pending_gap = bool(out)
            i += 1
        elif ch in _PUNCT:
            if pending_gap and out[-1][0] != BLACK:
                out.append((BLACK, i))
            pending_gap = False
            out.append((BLACK, i))
            i += 1
        else:
            j = i
            while j < n and not sentence[j].isspace() and sentence[j] not in _PUNCT:
                j += 1
            if out and (pending_gap or out[-1][0] != BLACK):
                out.append((BLACK, i))
            out.append((sentence[i:j].lower(), i))
            pending_gap = False
            i = j
    return out


def tokenize(sentence):
    """Lowercase word tokens with BLACK for spaces between words and for punctuation.

    >>> tokenize("Welcome to class")
    ['welcome', '<black>', 'to', '<black>', 'class']
    >>> tokenize("Hi!")
    ['hi', '<black>']
    """
    return [tok for tok, _ in _scan(sentence)]


def detokenize(tokens):
    return " ".join(t for t in tokens if t != BLACK)


@dataclass(frozen=True)
class PlanEntry:
    token: str
    kind: str  # word | letter | digit | black
    class_id: int | None


def plan_tokens(tokens, vocab: ClassVocabulary):
    """Map tokens to classes: whole words when known, else one class per character."""
    plan, problems = [], []
    for t_idx, tok in enumerate(tokens):
        if tok == BLACK:
            plan.append(PlanEntry(BLACK, "black", None))
            continue
        cid = vocab.lookup("word", tok)
        if cid is not None:
            plan.append(PlanEntry(tok, "word", cid))
            continue
        for c_idx, ch in enumerate(tok):
            kind = "digit" if ch in DIGITS else "letter"
            cid = vocab.lookup(kind, ch) if ch in DIGITS or ch in LETTERS else None
            if cid is None:
                problems.append((t_idx, c_idx, ch, tok))
            else:
                plan.append(PlanEntry(ch, kind, cid))
    if problems:
        raise UnrenderableError(problems)
    return plan


# ---------------------------------------------------------------- generation

def _check_generator(generator, vocab, stage):
    cfg = generator.config
    if cfg.n_classes != len(vocab):
        raise VocabularyError(f"generator has {cfg.n_classes} classes, vocabulary has {len(vocab)}")
    if not 0 <= stage <= cfg.max_stage:
        raise ValueError(f"stage {stage} not available in checkpoint (max stage {cfg.max_stage})")


def render_plan(plan, generator, stage, seed, batch=64):
    """(len(plan), 3, R, R) images; entry ``i`` uses latent from ``rng([seed, i])``."""
    R = 8 * 2 ** stage
    out = np.full((len(plan), 3, R, R), -1.0)
    idx = [i for i, e in enumerate(plan) if e.kind != "black"]
    zdim = generator.config.latent_dim
    z = np.stack([np.random.default_rng([seed, i]).standard_normal(zdim) for i in idx]) if idx else None
    labels = np.array([plan[i].class_id for i in idx], dtype=np.int64)
    with no_grad():
        for s in range(0, len(idx), batch):
            imgs = generator(z[s:s + batch], labels[s:s + batch], stage, 1.0).data
            out[idx[s:s + batch]] = imgs
    return out


@dataclass
class ManifestEntry:
    token: str
    kind: str
    class_id: int | None
    path: str


def generate_sequence(sentence, generator, stage, seed, out_dir, vocab: ClassVocabulary):
    """Write one PNG per plan entry plus ``manifest.json`` into ``out_dir``."""
    from .data import write_png

    _check_generator(generator, vocab, stage)
    plan = plan_tokens(tokenize(sentence), vocab)
    images = render_plan(plan, generator, stage, seed)
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for i, (e, img) in enumerate(zip(plan, images)):
        name = f"{i:04d}.png"
        write_png(os.path.join(out_dir, name), img)
        entries.append(ManifestEntry(e.token, e.kind, e.class_id, name))
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump({"entries": [asdict(e) for e in entries]}, fh, indent=1)
    return entries


def reassemble(class_ids, vocab: ClassVocabulary):
    """Predicted frame classes (None = black) -> words; letter/digit runs are joined."""
    words, run = [], []
    for cid in list(class_ids) + [None]:
        if cid is not None:
            kind, tok = vocab.token(cid)
            if kind != "word":
                run.append(tok)
                continue
        if run:
            words.append("".join(run))
            run = []
        if cid is not None:
            words.append(tok)
    return words


def roundtrip_bleu(paragraph, generator, classifier, vocab: ClassVocabulary, stage, seed=0, max_n=4):
    """Generate, classify each non-black frame, reassemble words, score against the source."""
    from .metrics import bleu

    if classifier.n_classes != len(vocab):
        raise VocabularyError(f"classifier has {classifier.n_classes} classes, vocabulary has {len(vocab)}")
    _check_generator(generator, vocab, stage)
    tokens = tokenize(paragraph)
    plan = plan_tokens(tokens, vocab)
    images = render_plan(plan, generator, stage, seed)
    idx = [i for i, e in enumerate(plan) if e.kind != "black"]
    pred = [None] * len(plan)
    if idx:
        for i, c in zip(idx, classifier.predict_proba(images[idx]).argmax(axis=1)):
            pred[i] = int(c)
    hypothesis = reassemble(pred, vocab)
    reference = [t for t in tokens if t != BLACK]
    return bleu(hypothesis, reference, max_n)
