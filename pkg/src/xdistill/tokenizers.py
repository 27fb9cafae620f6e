"""Two deliberately different text tokenizers.

The language stream follows the BERT surface conventions ([CLS]/[SEP]
framing, "##" continuation pieces); the clip stream follows the CLIP
surface conventions (<|startoftext|>/<|endoftext|> framing, end-of-word
"</w>" pieces).  Both are frequency-ranked whole-word vocabularies with a
character-level fallback, which is enough to give the two streams
different segmentations of the same text.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

LANGUAGE = "language"
CLIP = "clip"

_LANG_SPECIALS = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
_CLIP_SPECIALS = ["<|pad|>", "<|unk|>", "<|startoftext|>", "<|endoftext|>"]

_WORD_RE = re.compile(r"[a-z0-9]+|[^\sa-z0-9]")


class CorpusError(ValueError):
    pass


@dataclass
class Vocab:
    tokens: list[str]
    stream: str
    ids: dict[str, int] = field(init=False)

    def __post_init__(self):
        self.ids = {t: i for i, t in enumerate(self.tokens)}
        if len(self.ids) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self.tokens)

    @property
    def pad_id(self) -> int:
        return self.ids["[PAD]" if self.stream == LANGUAGE else "<|pad|>"]

    @property
    def unk_id(self) -> int:
        return self.ids["[UNK]" if self.stream == LANGUAGE else "<|unk|>"]

    @property
    def cls_id(self) -> int:
        return self.ids["[CLS]"]

    @property
    def sep_id(self) -> int:
        return self.ids["[SEP]"]

    @property
    def mask_id(self) -> int:
        return self.ids["[MASK]"]

    @property
    def start_id(self) -> int:
        return self.ids["<|startoftext|>"]

    @property
    def end_id(self) -> int:
        return self.ids["<|endoftext|>"]

    @property
    def special_ids(self) -> set[int]:
        specials = _LANG_SPECIALS if self.stream == LANGUAGE else _CLIP_SPECIALS
        return {self.ids[t] for t in specials}

    def save(self, path: str | Path):
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, stream: str) -> "Vocab":
        tokens = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([t for t in tokens if t], stream)


@dataclass
class TokenSequence:
    ids: list[int]
    attention_mask: list[int]
    stream: str

    def __len__(self):
        return len(self.ids)

    @property
    def content_length(self) -> int:
        return sum(self.attention_mask)

    def padded_to(self, n: int, pad_id: int) -> "TokenSequence":
        if len(self.ids) > n:
            raise ValueError(f"sequence of length {len(self.ids)} does not fit in {n}")
        extra = n - len(self.ids)
        return TokenSequence(self.ids + [pad_id] * extra, self.attention_mask + [0] * extra, self.stream)


def split_words(text: str) -> list[str]:
    """Lowercase and split into word/punctuation units (both streams)."""
    return _WORD_RE.findall(text.lower())


def read_corpus(path: str | Path) -> list[list[str]]:
    """Read a one-sentence-per-line corpus; blank lines separate documents."""
    docs: list[list[str]] = []
    current: list[str] = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            if current:
                docs.append(current)
                current = []
            continue
        current.append(line)
    if current:
        docs.append(current)
    if not docs:
        raise CorpusError(f"corpus {path} contains no sentences")
    return docs


def sentences_of(docs: list[list[str]]) -> list[str]:
    return [s for doc in docs for s in doc]


def build_vocab(corpus_path: str | Path, stream: str, max_size: int = 2000) -> Vocab:
    """Frequency-ranked whole-word vocabulary with character fallback pieces.

    The character pieces guarantee that encode() is total; ranked words are
    admitted until `max_size` entries exist in total.
    """
    docs = read_corpus(corpus_path)
    counts: dict[str, int] = {}
    chars: set[str] = set()
    for sentence in sentences_of(docs):
        for word in split_words(sentence):
            counts[word] = counts.get(word, 0) + 1
            chars.update(word)

    specials = list(_LANG_SPECIALS if stream == LANGUAGE else _CLIP_SPECIALS)
    fallback: list[str] = []
    for c in sorted(chars):
        if stream == LANGUAGE:
            fallback += [c, "##" + c]
        else:
            fallback += [c, c + "</w>"]
    base = specials + fallback
    if max_size < len(base):
        raise ValueError(f"max_size {max_size} cannot hold {len(base)} specials and fallback pieces")

    ranked = sorted(counts, key=lambda w: (-counts[w], w))
    words = []
    existing = set(base)
    for w in ranked:
        piece = w if stream == LANGUAGE else w + "</w>"
        if piece not in existing:
            words.append(piece)
        if len(base) + len(words) >= max_size:
            break
    return Vocab(base + words, stream)


def _segment_language(v: Vocab, word: str) -> list[int]:
    pieces: list[int] = []
    pos = 0
    while pos < len(word):
        prefix = "##" if pos > 0 else ""
        # Greedy longest match against the vocabulary.
        for end in range(len(word), pos, -1):
            cand = prefix + word[pos:end]
            if cand in v.ids:
                pieces.append(v.ids[cand])
                pos = end
                break
        else:
            pieces.append(v.unk_id)
            pos += 1
    return pieces


def _segment_clip(v: Vocab, word: str) -> list[int]:
    pieces: list[int] = []
    pos = 0
    while pos < len(word):
        for end in range(len(word), pos, -1):
            cand = word[pos:end] + ("</w>" if end == len(word) else "")
            if cand in v.ids:
                pieces.append(v.ids[cand])
                pos = end
                break
        else:
            pieces.append(v.unk_id)
            pos += 1
    return pieces


def _word_ids(v: Vocab, sentence: str) -> list[int]:
    segment = _segment_language if v.stream == LANGUAGE else _segment_clip
    ids: list[int] = []
    for word in split_words(sentence):
        ids.extend(segment(v, word))
    return ids


def encode(v: Vocab, sentence: str, second: str | None = None) -> TokenSequence:
    """Encode one or two sentences with the stream's framing conventions.

    Language layout: [CLS] s1 [SEP] (s2 [SEP]).
    Clip layout:     <start> s1 <end> (<start> s2 <end>).
    """
    if not sentence or (second is not None and not second):
        raise ValueError("cannot encode an empty sentence")
    if v.stream == LANGUAGE:
        ids = [v.cls_id] + _word_ids(v, sentence) + [v.sep_id]
        if second is not None:
            ids += _word_ids(v, second) + [v.sep_id]
    else:
        ids = [v.start_id] + _word_ids(v, sentence) + [v.end_id]
        if second is not None:
            ids += [v.start_id] + _word_ids(v, second) + [v.end_id]
    return TokenSequence(ids, [1] * len(ids), v.stream)


def segment_ids(v: Vocab, seq: TokenSequence) -> list[int]:
    """0/1 sentence-membership ids for the language layout (0 through the
    first [SEP], 1 afterwards)."""
    out = []
    segment = 0
    for tid in seq.ids:
        out.append(segment if tid != v.pad_id else 0)
        if tid == v.sep_id:
            segment = 1
    return out


def decode(v: Vocab, ids: list[int]) -> str:
    """Inverse of encode up to casing and whitespace; specials are dropped."""
    words: list[str] = []
    specials = v.special_ids
    if v.stream == LANGUAGE:
        for tid in ids:
            if tid in specials:
                continue
            tok = v.tokens[tid]
            if tok.startswith("##") and words:
                words[-1] += tok[2:]
            else:
                words.append(tok)
    else:
        buf = ""
        for tid in ids:
            if tid in specials:
                continue
            tok = v.tokens[tid]
            if tok.endswith("</w>"):
                words.append(buf + tok[:-4])
                buf = ""
            else:
                buf += tok
        if buf:
            words.append(buf)
    return " ".join(words)


def load_stopwords(path: str | Path | None = None) -> set[str]:
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
    else:
        text = resources.files("xdistill").joinpath("data/stopwords.txt").read_text(encoding="utf-8")
    return {w.strip().lower() for w in text.splitlines() if w.strip()}


def word_frequencies(corpus_path: str | Path) -> dict[str, int]:
    """Token occurrence counts in grounding-reference format."""
    counts: dict[str, int] = {}
    for sentence in sentences_of(read_corpus(corpus_path)):
        for word in split_words(sentence):
            counts[word] = counts.get(word, 0) + 1
    return counts


def save_frequencies(freq: dict[str, int], path: str | Path):
    lines = [f"{tok}\t{n}" for tok, n in sorted(freq.items(), key=lambda kv: (-kv[1], kv[0]))]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_frequencies(path: str | Path) -> dict[str, int]:
    freq = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        tok, _, n = line.partition("\t")
        freq[tok] = int(n)
    return freq


def classify_grounded(token: str, stopwords: set[str], freq: dict[str, int], threshold: int = 100) -> str:
    """Classify a token as 'stopword', 'grounded', or 'non-grounded'.

    A non-stopword is grounded when its reference-corpus count exceeds the
    threshold (default 100 occurrences).
    """
    word = token.lower().lstrip("#").removesuffix("</w>")
    if word in stopwords:
        return "stopword"
    return "grounded" if freq.get(word, 0) > threshold else "non-grounded"
