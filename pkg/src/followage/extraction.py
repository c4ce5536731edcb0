"""Ground-truth age labels from free-text account descriptions.

Rules are regular expressions shipped as data (see ``data/default_rules.txt``).
An age statement yields a two-digit age unless any exclusion rule also
matches the text; proxy rules (retired, grandparent) are only consulted when
no age statement matched.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator

_RULE_LINE = re.compile(r"^(match|exclude|proxy:(?P<token>[\w-]+))(?:@(?P<lang>[a-z]{2}))?:(?P<pattern>.+)$")
_ESCAPE = re.compile(r"\\([\\tnr])")
_UNESCAPE = {"\\": "\\", "t": "\t", "n": "\n", "r": "\r"}


class RuleError(ValueError):
    pass


@dataclass(frozen=True)
class Rule:
    kind: str  # match | exclude | proxy
    lang: str | None
    pattern: re.Pattern
    token: str | None = None

    @property
    def key(self) -> str:
        kind = self.kind if self.token is None else f"proxy:{self.token}"
        return f"{kind}@{self.lang or '*'}:{self.pattern.pattern}"


@dataclass(frozen=True)
class ExtractionRules:
    match: tuple[Rule, ...]
    exclude: tuple[Rule, ...]
    proxy: tuple[Rule, ...]

    @property
    def languages(self) -> set[str]:
        return {r.lang for r in self.match + self.exclude + self.proxy if r.lang}


def parse_rules(text: str, langs: Iterable[str] | None = None) -> ExtractionRules:
    """Parse a rule file; ``langs`` keeps only rules for those languages (plus untagged ones)."""
    keep = None if langs is None else set(langs)
    groups = {"match": [], "exclude": [], "proxy": []}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        m = _RULE_LINE.match(line)
        if not m:
            raise RuleError(f"line {lineno}: expected match:, exclude: or proxy:<token>: prefix: {raw!r}")
        lang = m.group("lang")
        if keep is not None and lang is not None and lang not in keep:
            continue
        try:
            pattern = re.compile(m.group("pattern"), re.IGNORECASE)
        except re.error as exc:
            raise RuleError(f"line {lineno}: bad regex: {exc}") from None
        token = m.group("token")
        kind = "proxy" if token else m.group(1)
        if kind == "match" and pattern.groups != 1:
            raise RuleError(f"line {lineno}: match rules need exactly one capture group")
        groups[kind].append(Rule(kind, lang, pattern, token))
    return ExtractionRules(tuple(groups["match"]), tuple(groups["exclude"]), tuple(groups["proxy"]))


def default_rules_text() -> str:
    return resources.files("followage").joinpath("data/default_rules.txt").read_text(encoding="utf-8")


def load_rules(path: str | Path | None = None, langs: Iterable[str] | None = None) -> ExtractionRules:
    text = default_rules_text() if path is None else Path(path).read_text(encoding="utf-8")
    return parse_rules(text, langs)


@dataclass
class _Scan:
    result: tuple[str, object] | None
    matched: Rule | None = None
    vetoes: list[Rule] = field(default_factory=list)


def _scan(description: str, rules: ExtractionRules) -> _Scan:
    first = None
    for rule in rules.match:
        m = rule.pattern.search(description)
        if m:
            age = int(m.group(1))
            if 10 <= age <= 99:
                first = (rule, age)
                break
    if first is not None:
        vetoes = [r for r in rules.exclude if r.pattern.search(description)]
        if vetoes:
            return _Scan(None, first[0], vetoes)
        return _Scan(("age", first[1]), first[0])
    for rule in rules.proxy:
        if rule.pattern.search(description):
            return _Scan(("proxy", rule.token), rule)
    return _Scan(None)


def extract_age(description: str, rules: ExtractionRules | None = None) -> tuple[str, object] | None:
    """``("age", years)``, ``("proxy", token)`` or ``None``."""
    if rules is None:
        rules = load_rules()
    return _scan(description, rules).result


@dataclass
class ExtractionReport:
    scanned: int = 0
    ages: int = 0
    proxies: Counter = field(default_factory=Counter)
    match_hits: Counter = field(default_factory=Counter)  # rule key -> matches (before exclusion)
    match_langs: Counter = field(default_factory=Counter)
    exclusions: Counter = field(default_factory=Counter)  # rule key -> vetoes fired
    excluded: int = 0

    def merge(self, other: "ExtractionReport") -> "ExtractionReport":
        return ExtractionReport(
            self.scanned + other.scanned, self.ages + other.ages, self.proxies + other.proxies,
            self.match_hits + other.match_hits, self.match_langs + other.match_langs,
            self.exclusions + other.exclusions, self.excluded + other.excluded)

    def to_text(self) -> str:
        lines = [f"scanned\t{self.scanned}", f"ages\t{self.ages}", f"excluded\t{self.excluded}"]
        lines += [f"proxy\t{tok}\t{n}" for tok, n in sorted(self.proxies.items())]
        lines += [f"lang\t{lang}\t{n}" for lang, n in sorted(self.match_langs.items())]
        lines += [f"match\t{key}\t{n}" for key, n in sorted(self.match_hits.items())]
        lines += [f"exclude\t{key}\t{n}" for key, n in sorted(self.exclusions.items())]
        return "\n".join(lines) + "\n"


def extract_corpus(descriptions: Iterable[tuple[int, str]],
                   rules: ExtractionRules | None = None) -> tuple[list[tuple[int, str]], ExtractionReport]:
    """Label lines ``(user_id, "age:22" | "proxy:retired")`` and a scan report."""
    if rules is None:
        rules = load_rules()
    report = ExtractionReport()
    labels = []
    for uid, text in descriptions:
        report.scanned += 1
        scan = _scan(text, rules)
        if scan.matched is not None and scan.matched.kind == "match":
            report.match_hits[scan.matched.key] += 1
            report.match_langs[scan.matched.lang or "*"] += 1
        for r in scan.vetoes:
            report.exclusions[r.key] += 1
        if scan.vetoes:
            report.excluded += 1
        if scan.result is None:
            continue
        kind, value = scan.result
        if kind == "age":
            report.ages += 1
        else:
            report.proxies[value] += 1
        labels.append((uid, f"{kind}:{value}"))
    return labels, report


def unescape(text: str) -> str:
    return _ESCAPE.sub(lambda m: _UNESCAPE[m.group(1)], text)


def read_corpus(path: str | Path) -> Iterator[tuple[int, str]]:
    """Stream ``user_id<TAB>text`` lines; TABs inside text are written as ``\\t``."""
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line:
                continue
            uid, sep, text = line.partition("\t")
            if not sep or not uid.isdigit():
                raise ValueError(f"{path}: line {lineno}: expected user_id<TAB>text")
            yield int(uid), unescape(text)


def write_label_lines(labels: Iterable[tuple[int, str]], path: str | Path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for uid, value in labels:
            fh.write(f"{uid}\t{value}\n")
