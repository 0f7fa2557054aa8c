"""Corpus cleaning pipeline: sanitize, trim, gate, boilerplate blacklist,
near-duplicate removal, final validation.

Stages run in a fixed order and the output is canonical: records are sorted
by (source_tag, content hash) before doc_ids are assigned, so shuffling the
inputs cannot change a byte of the output. Dropped documents stay in the
audit report with the stage that removed them.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import unicodedata
from dataclasses import dataclass, field

from .errors import ConfigError, EncodingError
from .minhash import MinHashSignature, estimated_jaccard, lsh_candidate_pairs, minhash_signature

TRIM_RULES_VERSION = "trim-v1"

# Order is part of the contract; each rule runs to a fixed point so the whole
# trimmer is idempotent even on nested markup.
DEFAULT_TRIM_RULES: tuple[tuple[str, re.Pattern], ...] = (
    ("url", re.compile(r"(?:https?://|www\.)\S+")),
    ("wiki_template", re.compile(r"\{\{[^{}]*\}\}")),
    ("wiki_namespace_link", re.compile(r"\[\[(?:[A-Za-z]+):[^\[\]]*\]\]")),
    ("wiki_link_markup", re.compile(r"\[\[(?:[^\[\]|]*\|)?|\]\]")),
    ("heading_line", re.compile(r"^[ \t]*=+[^=\n]*=+[ \t]*$", re.MULTILINE)),
    ("bracket_citation", re.compile(r"\[\d+(?:[,;\s]+\d+)*\]")),
    ("quote_markup", re.compile(r"''+")),
)


@dataclass
class CleanConfig:
    min_length: int = 200
    min_alpha_ratio: float = 0.60
    max_symbol_ratio: float = 0.25
    word_len_range: tuple[float, float] = (2.0, 14.0)
    max_char_frac: float = 0.20
    ngram_n: int = 5
    blacklist_df_floor: int = 10
    blacklist_df_frac: float = 0.01
    minhash_k: int = 256
    shingle_w: int = 5
    minhash_seed: int = 0
    lsh_bands: int = 32
    lsh_rows: int = 8
    jaccard_threshold: float = 0.85
    lang_allowlist: list[str] | None = None
    stages_off: list[str] = field(default_factory=list)

    @classmethod
    def from_json(cls, path) -> "CleanConfig":
        with open(path, encoding="utf-8") as f:
            d = json.load(f)
        if "word_len_range" in d:
            d["word_len_range"] = tuple(d["word_len_range"])
        return cls(**d)


@dataclass
class DocumentRecord:
    doc_id: int
    source_tag: str
    text: str
    flags: set[str] = field(default_factory=set)
    duplicate_of: int | None = None
    lang_hint: str | None = None

    @property
    def dropped(self) -> bool:
        return "gated_out" in self.flags or self.duplicate_of is not None


_CONTROL = re.compile(r"[\x00-\x08\x0b\x0c\x0e-\x1f\x7f]")


def _collapse_whitespace(text: str) -> str:
    text = re.sub(r"[ \t]*\n[ \t\n]*", "\n", text)
    text = re.sub(r"[ \t]+", " ", text)
    return text.strip()


def normalize_unicode(text: str) -> str:
    """NFC form, control characters stripped (newline and tab survive),
    whitespace runs collapsed. Idempotent."""
    text = unicodedata.normalize("NFC", text)
    text = _CONTROL.sub("", text)
    return _collapse_whitespace(text.replace("\t", " "))


def regex_trim(text: str, rules=DEFAULT_TRIM_RULES) -> str:
    """Remove noise spans (URLs, wiki markup residue, citations, heading
    lines); each rule repeats until it stops matching, then whitespace is
    re-collapsed."""
    for _, rx in rules:
        prev = None
        while prev != text:
            prev = text
            text = rx.sub("", text)
    return _collapse_whitespace(text)


@dataclass
class GateResult:
    passed: bool
    reason: str | None = None


def heuristic_gate(text: str, cfg: CleanConfig | None = None) -> GateResult:
    """Reject documents that do not look like natural prose.

    Checks run in a fixed order: length, alphabetic ratio, symbol/digit
    ratio, mean word length, single-character flood.
    """
    cfg = cfg or CleanConfig()
    n = len(text)
    if n < cfg.min_length:
        return GateResult(False, "too_short")
    alpha = sum(1 for c in text if c.isalpha())
    if alpha / n < cfg.min_alpha_ratio:
        return GateResult(False, "alpha_ratio")
    symbols = sum(1 for c in text if not c.isalnum() and not c.isspace())
    digits = sum(1 for c in text if c.isdigit())
    if (symbols + digits) / n > cfg.max_symbol_ratio:
        return GateResult(False, "symbol_ratio")
    words = text.split()
    mean_len = sum(len(w) for w in words) / len(words)
    lo, hi = cfg.word_len_range
    if not lo <= mean_len <= hi:
        return GateResult(False, "word_length")
    counts: dict[str, int] = {}
    for c in text:
        counts[c] = counts.get(c, 0) + 1
    if max(counts.values()) / n > cfg.max_char_frac:
        return GateResult(False, "char_flood")
    return GateResult(True, None)


def language_hint(text: str) -> str | None:
    """Cheap character-frequency likelihood: Latin-script prose keeps its
    vowel share in a broad band. Returns a hint label, not a language id."""
    alpha = [c for c in text.lower() if c.isalpha()]
    if not alpha:
        return None
    vowels = sum(1 for c in alpha if c in "aeiou")
    ratio = vowels / len(alpha)
    return "latin" if 0.20 <= ratio <= 0.60 else None


def _line_ngrams(line: str, n: int) -> set[tuple[str, ...]]:
    words = line.split()
    if len(words) < n:
        return set()
    return {tuple(words[i : i + n]) for i in range(len(words) - n + 1)}


def build_ngram_blacklist(texts, cfg: CleanConfig | None = None) -> set[tuple[str, ...]]:
    """Word n-grams whose document frequency exceeds max(floor, frac * N)."""
    cfg = cfg or CleanConfig()
    texts = list(texts)
    df: dict[tuple[str, ...], int] = {}
    for text in texts:
        grams: set[tuple[str, ...]] = set()
        for line in text.split("\n"):
            grams |= _line_ngrams(line, cfg.ngram_n)
        for g in grams:
            df[g] = df.get(g, 0) + 1
    threshold = max(cfg.blacklist_df_floor, cfg.blacklist_df_frac * len(texts))
    return {g for g, c in df.items() if c > threshold}


def apply_blacklist(text: str, blacklist: set[tuple[str, ...]], cfg: CleanConfig | None = None) -> tuple[str, bool]:
    """Drop every line whose n-gram set intersects the blacklist."""
    cfg = cfg or CleanConfig()
    if not blacklist:
        return text, False
    kept = []
    hit = False
    for line in text.split("\n"):
        if _line_ngrams(line, cfg.ngram_n) & blacklist:
            hit = True
        else:
            kept.append(line)
    return "\n".join(kept).strip(), hit


def lsh_dedup(records: list[DocumentRecord], cfg: CleanConfig | None = None) -> list[list[int]]:
    """Flag near-duplicates among the still-live records.

    LSH banding proposes candidates, the signature-estimated Jaccard above
    the threshold confirms them, and within each cluster the lowest doc_id
    survives. Returns the duplicate clusters (sorted doc_id lists).
    """
    cfg = cfg or CleanConfig()
    live = [r for r in records if not r.dropped]
    sigs: list[MinHashSignature] = [
        minhash_signature(r.text, k=cfg.minhash_k, w=cfg.shingle_w, seed=cfg.minhash_seed)
        for r in live
    ]
    pairs = lsh_candidate_pairs(sigs, bands=cfg.lsh_bands, rows=cfg.lsh_rows)

    parent = list(range(len(live)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for ai, bi in sorted(pairs):
        if estimated_jaccard(sigs[ai], sigs[bi]) > cfg.jaccard_threshold:
            ra, rb = find(ai), find(bi)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)

    clusters: dict[int, list[int]] = {}
    for i in range(len(live)):
        clusters.setdefault(find(i), []).append(i)
    out = []
    for members in clusters.values():
        if len(members) < 2:
            continue
        ids = sorted(live[i].doc_id for i in members)
        survivor = ids[0]
        for i in members:
            if live[i].doc_id != survivor:
                live[i].duplicate_of = survivor
                live[i].flags.add(f"duplicate_of({survivor})")
        out.append(ids)
    return sorted(out)


def _canonical_records(raw_docs: list[tuple[str, str]]) -> list[DocumentRecord]:
    keyed = sorted(
        (tag, hashlib.sha1(text.encode("utf-8")).hexdigest(), text) for tag, text in raw_docs
    )
    return [DocumentRecord(doc_id=i, source_tag=t, text=x) for i, (t, _, x) in enumerate(keyed)]


def run_pipeline(raw_docs: list[tuple[str, str]], cfg: CleanConfig | None = None):
    """Clean (source_tag, text) pairs; returns (records, audit).

    Stage order: sanitize, trim, gate, blacklist, dedup, validate. The final
    validation re-runs the gate so the pipeline is a fixed point on its own
    output. Every input stays in ``records``; dropped ones carry flags.
    """
    cfg = cfg or CleanConfig()
    off = set(cfg.stages_off)
    records = _canonical_records(raw_docs)
    audit: dict = {
        "trim_rules_version": TRIM_RULES_VERSION,
        "counts": {"input": len(records)},
        "dropped": {},
        "retained_chars": {},
        "duplicate_clusters": [],
        "skipped_files": [],
    }

    def note(stage: str, dropped: int) -> None:
        audit["dropped"][stage] = dropped
        audit["retained_chars"][stage] = sum(len(r.text) for r in records if not r.dropped)

    for r in records:
        r.text = normalize_unicode(r.text)
    note("sanitize", 0)

    if "trim" not in off:
        for r in records:
            trimmed = regex_trim(r.text)
            if trimmed != r.text:
                r.flags.add("trimmed")
                r.text = trimmed
    note("trim", 0)

    gated = 0
    if "gate" not in off:
        for r in records:
            r.lang_hint = language_hint(r.text)
            result = heuristic_gate(r.text, cfg)
            if not result.passed:
                r.flags.add("gated_out")
                r.flags.add(f"gate_reason({result.reason})")
                gated += 1
            elif cfg.lang_allowlist is not None and r.lang_hint not in cfg.lang_allowlist:
                r.flags.add("gated_out")
                r.flags.add("gate_reason(language)")
                gated += 1
    note("gate", gated)

    if "blacklist" not in off:
        live = [r for r in records if not r.dropped]
        blacklist = build_ngram_blacklist((r.text for r in live), cfg)
        for r in live:
            new_text, hit = apply_blacklist(r.text, blacklist, cfg)
            if hit:
                r.flags.add("boilerplate_hit")
                r.text = new_text
        audit["blacklist_size"] = len(blacklist)
    note("blacklist", 0)

    deduped = 0
    if "dedup" not in off:
        clusters = lsh_dedup(records, cfg)
        audit["duplicate_clusters"] = clusters
        deduped = sum(len(c) - 1 for c in clusters)
    note("dedup", deduped)

    validated = 0
    if "gate" not in off:
        for r in records:
            if r.dropped:
                continue
            result = heuristic_gate(r.text, cfg)
            if not result.passed:
                r.flags.add("gated_out")
                r.flags.add(f"validate_reason({result.reason})")
                validated += 1
    note("validate", validated)

    audit["counts"]["output"] = sum(1 for r in records if not r.dropped)
    return records, audit


def read_input_file(path) -> list[tuple[str, str]]:
    """A .jsonl file holds one record per line; anything else is one document.

    Invalid UTF-8 raises EncodingError with the byte offset.
    """
    tag = os.path.basename(str(path))
    try:
        with open(path, "rb") as f:
            raw = f.read()
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise EncodingError(exc.reason, offset=exc.start) from None
    if str(path).endswith((".jsonl", ".ndjson")):
        docs = []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            docs.append((str(obj.get("source_tag", tag)), str(obj["text"])))
        return docs
    return [(tag, text)]


def collect_inputs(in_dir) -> tuple[list[tuple[str, str]], list[str]]:
    """(docs, skipped_files) over every regular file under in_dir, sorted."""
    docs: list[tuple[str, str]] = []
    skipped: list[str] = []
    paths = sorted(
        os.path.join(in_dir, name)
        for name in os.listdir(in_dir)
        if os.path.isfile(os.path.join(in_dir, name))
    )
    for p in paths:
        try:
            docs.extend(read_input_file(p))
        except (EncodingError, json.JSONDecodeError, OSError) as exc:
            skipped.append(f"{p}: {exc}")
    return docs, skipped


def write_clean_output(records: list[DocumentRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in sorted(records, key=lambda r: r.doc_id):
            if r.dropped:
                continue
            f.write(json.dumps(
                {"doc_id": r.doc_id, "source_tag": r.source_tag, "text": r.text},
                sort_keys=True,
            ) + "\n")


def write_audit(audit: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(audit, f, indent=2, sort_keys=True)
        f.write("\n")
