"""Reference byte-level BPE: regex pretokenization, full pair recount
before every merge, ties to the pair seen first in word order.

Writes the merge list for fixtures/tokenizer_1k.txt and the token count of
the fixture corpus under a 512-entry vocabulary.
"""
import json
from pathlib import Path

import regex

PATTERN = regex.compile(
    r"""'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+"""
)
BASE = 257


def train(text, vocab_size):
    index, words, freq = {}, [], []
    for m in PATTERN.finditer(text):
        p = m.group()
        if p in index:
            freq[index[p]] += 1
        else:
            index[p] = len(words)
            words.append(list(p.encode()))
            freq.append(1)
    merges = []
    while BASE + len(merges) < vocab_size:
        stats, first = {}, {}
        for w, word in enumerate(words):
            for i in range(1, len(word)):
                pair = (word[i - 1], word[i])
                stats[pair] = stats.get(pair, 0) + freq[w]
                first.setdefault(pair, (w, i))
        if not stats:
            break
        best = max(stats, key=lambda p: (stats[p], tuple(-x for x in first[p])))
        new = BASE + len(merges)
        for w, word in enumerate(words):
            out, i = [], 0
            while i < len(word):
                if i + 1 < len(word) and (word[i], word[i + 1]) == best:
                    out.append(new)
                    i += 2
                else:
                    out.append(word[i])
                    i += 1
            words[w] = out
        merges.append(best)
    return merges


def encode(text, merges):
    rank = {p: i for i, p in enumerate(merges)}
    cache, ids = {}, []
    for m in PATTERN.finditer(text):
        p = m.group()
        if p not in cache:
            word = list(p.encode())
            while len(word) > 1:
                pairs = [(rank.get((word[i], word[i + 1]), 1 << 30), i) for i in range(len(word) - 1)]
                r, i = min(pairs)
                if r == 1 << 30:
                    break
                word[i : i + 2] = [BASE + r]
            cache[p] = word
        ids.extend(cache[p])
    return ids


PRETOKEN_CASES = [
    "Hello world, it's 2024!",
    "  leading and trailing  ",
    "tabs\tand\nnewlines\n\n  end",
    "they'll we've I'm you'd she's can't THEY'RE",
    "naïve café «déjà vu»… 東京 3.14 x2y3",
    "!!??...  --> a+b=c   \u00a0nbsp",
    "emoji 🙂🙂 mixed123abc '' ' s",
]


def main():
    root = Path(__file__).resolve().parents[2]
    cases = []
    for text in PRETOKEN_CASES:
        spans = []
        for m in PATTERN.finditer(text):
            spans.append([len(text[:m.start()].encode()), len(text[:m.end()].encode())])
        cases.append({"text": text, "spans": spans})
    (root / "fixtures/oracles/pretokens.json").write_text(json.dumps(cases, ensure_ascii=False, indent=1) + "\n")
    small = (root / "fixtures/tokenizer_1k.txt").read_text()
    merges = train(small, 400)
    (root / "fixtures/oracles/bpe_1k_merges.txt").write_text(
        "".join(f"{a} {b}\n" for a, b in merges)
    )
    files = sorted(
        p for p in (root / "fixtures/corpus").rglob("*") if p.suffix in (".txt", ".train")
    )
    texts = [p.read_text() for p in files]
    corpus_merges = train("".join(t + "\n" for t in texts), 512)
    tokens = sum(len(encode(t, corpus_merges)) + 1 for t in texts)
    (root / "fixtures/oracles/ingest_count.json").write_text(
        json.dumps({"vocab_size": 512, "vocab_len": BASE + len(corpus_merges), "tokens": tokens}, indent=2)
        + "\n"
    )


if __name__ == "__main__":
    main()
