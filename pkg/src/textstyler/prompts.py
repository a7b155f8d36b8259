"""Style prompt corpus built from keyword lists.

A rule is a tuple of bank categories such as ``("colors", "textures")``;
each combination renders its keywords in rule order ("blue lines").
Per-rule counts are drawn without replacement from the full cross product.
"""
import itertools
from dataclasses import dataclass, field
from importlib import resources
from math import prod

from .errors import InvalidConfigError, ParseError
from .seeding import rng_for

CATEGORIES = ("colors", "textures", "art_styles", "objects")

# Full crosses of the five pair categories give 2,915 prompts; with the 104
# single keywords that is 3,019, and 1,283 colour-art-texture triples bring
# the default corpus to 4,302.
DEFAULT_RULES = (
    ("colors", "textures"),
    ("colors", "art_styles"),
    ("colors", "objects"),
    ("art_styles", "textures"),
    ("art_styles", "objects"),
    ("colors", "art_styles", "textures"),
)
DEFAULT_COUNTS = (None, None, None, None, None, 1283)


@dataclass
class KeywordBank:
    colors: list = field(default_factory=list)
    textures: list = field(default_factory=list)
    art_styles: list = field(default_factory=list)
    objects: list = field(default_factory=list)

    def __post_init__(self):
        for name in CATEGORIES:
            words = getattr(self, name)
            if len(set(words)) != len(words):
                raise InvalidConfigError(f"duplicate keyword in {name}")
            if any(not w or w != w.strip().lower() for w in words):
                raise InvalidConfigError(f"{name} keywords must be non-empty and lowercase")

    def category(self, name):
        if name not in CATEGORIES:
            raise InvalidConfigError(f"unknown category {name!r}")
        return getattr(self, name)

    def sizes(self):
        return {name: len(getattr(self, name)) for name in CATEGORIES}


@dataclass
class PromptCorpus:
    prompts: list
    provenance: list  # (categories, keyword indices) per prompt
    seed: int = 0

    def __len__(self):
        return len(self.prompts)

    def __iter__(self):
        return iter(self.prompts)


def parse_bank(text):
    sections = {name: [] for name in CATEGORIES}
    seen = {name: {} for name in CATEGORIES}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if current not in sections:
                raise ParseError(f"unknown category header [{current}]", line=lineno)
            continue
        if current is None:
            raise ParseError("keyword before any category header", line=lineno)
        word = " ".join(line.lower().split())
        if word in seen[current]:
            raise ParseError(f"duplicate entry {word!r} in [{current}] "
                             f"(first on line {seen[current][word]})", line=lineno)
        seen[current][word] = lineno
        sections[current].append(word)
    return KeywordBank(**sections)


def load_bank(path):
    with open(path, encoding="utf-8") as fh:
        return parse_bank(fh.read())


def default_bank():
    return parse_bank(resources.files("textstyler.data").joinpath("default_bank.txt").read_text("utf-8"))


def combination_count(bank, rule):
    return prod(len(bank.category(c)) for c in rule)


def combine(bank, rules=DEFAULT_RULES, counts=DEFAULT_COUNTS, seed=0):
    """Singles first, then each rule's sampled combinations, duplicates dropped.

    A count of ``None`` takes the full cross product of that rule.
    """
    if len(rules) != len(counts):
        raise InvalidConfigError("rules and counts must have the same length")
    prompts, provenance, seen = [], [], set()

    def add(text, prov):
        if text not in seen:
            seen.add(text)
            prompts.append(text)
            provenance.append(prov)

    for name in CATEGORIES:
        for i, word in enumerate(bank.category(name)):
            add(word, ((name,), (i,)))

    for r, (rule, count) in enumerate(zip(rules, counts)):
        rule = tuple(rule)
        lists = [bank.category(c) for c in rule]
        total = combination_count(bank, rule)
        if count is None:
            count = total
        if count < 0 or count > total:
            raise InvalidConfigError(f"rule {'-'.join(rule)} asks for {count} of {total} combinations")
        chosen = sorted(rng_for("combine", seed, r, rule).choice(total, size=count, replace=False).tolist())
        shape = [len(words) for words in lists]
        for flat in chosen:
            idx = _unravel(flat, shape)
            add(" ".join(words[i] for words, i in zip(lists, idx)), (rule, idx))
    return PromptCorpus(prompts, provenance, seed)


def _unravel(flat, shape):
    idx = []
    for size in reversed(shape):
        flat, rem = divmod(flat, size)
        idx.append(rem)
    return tuple(reversed(idx))


def enumerate_all(bank, rules):
    """Every prompt reachable by full crosses, for brute-force checks."""
    out = []
    for name in CATEGORIES:
        out.extend(bank.category(name))
    for rule in rules:
        for combo in itertools.product(*(bank.category(c) for c in rule)):
            out.append(" ".join(combo))
    return out


def save_corpus(corpus, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for prompt in corpus:
            fh.write(prompt + "\n")


def load_corpus(path):
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh if line.strip()]
