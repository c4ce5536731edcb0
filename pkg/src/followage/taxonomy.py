"""Age bands, proxy-label weights and the categorical prior over bands."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

OPEN = None

# Survey + census prior over the ten default bands, in percent.
_DEFAULT_PRIOR_PERCENT = (1, 2, 2, 3, 14, 23, 23, 22, 6, 4)


class TaxonomyError(ValueError):
    pass


@dataclass(frozen=True)
class Band:
    index: int
    lower: int | None  # inclusive, None = open below
    upper: int | None  # inclusive, None = open above

    def contains(self, years: int) -> bool:
        if self.lower is not None and years < self.lower:
            return False
        if self.upper is not None and years > self.upper:
            return False
        return True

    @property
    def label(self) -> str:
        if self.lower is None:
            return f"<{self.upper + 1}"
        if self.upper is None:
            return f">={self.lower}"
        return f"{self.lower}-{self.upper}"

    def representative_age(self) -> int:
        """An integer age inside the band, used when writing category labels as ages."""
        return self.lower if self.lower is not None else self.upper


@dataclass(frozen=True)
class AgeTaxonomy:
    bands: tuple[Band, ...]
    proxy_rules: dict[str, tuple[float, ...]] = field(default_factory=dict)

    def __post_init__(self):
        _validate_bands(self.bands)
        for token, weights in self.proxy_rules.items():
            _validate_weights(token, weights, len(self.bands))

    def __len__(self) -> int:
        return len(self.bands)

    @property
    def labels(self) -> list[str]:
        return [b.label for b in self.bands]

    def is_default(self) -> bool:
        return self.bands == DEFAULT_TAXONOMY.bands

    def to_text(self) -> str:
        """Serialize back to the taxonomy file format (round-trips through `load_taxonomy`)."""
        lines = []
        for b in self.bands:
            lo = "*" if b.lower is None else str(b.lower)
            hi = "*" if b.upper is None else str(b.upper)
            lines.append(f"{b.index}\t{lo}\t{hi}")
        for token in sorted(self.proxy_rules):
            ws = ",".join(repr(w) for w in self.proxy_rules[token])
            lines.append(f"proxy\t{token}\t{ws}")
        return "\n".join(lines) + "\n"


def _validate_bands(bands):
    if len(bands) < 2:
        raise TaxonomyError("taxonomy needs at least 2 categories")
    for pos, b in enumerate(bands):
        if b.index != pos:
            raise TaxonomyError(f"band indices must be 0..{len(bands) - 1} in order, got {b.index} at position {pos}")
        if b.lower is not None and b.upper is not None and b.lower > b.upper:
            raise TaxonomyError(f"band {b.index} has lower {b.lower} > upper {b.upper}")
        if b.lower is None and pos != 0:
            raise TaxonomyError(f"only the first band may be open below (band {b.index})")
        if b.upper is None and pos != len(bands) - 1:
            raise TaxonomyError(f"only the last band may be open above (band {b.index})")
    for prev, cur in zip(bands, bands[1:]):
        if prev.upper is None or cur.lower is None:
            raise TaxonomyError(f"bands {prev.index} and {cur.index}: open bound between adjacent bands")
        if cur.lower <= prev.upper:
            raise TaxonomyError(f"overlap between bands {prev.index} ({prev.label}) and {cur.index} ({cur.label})")
        if cur.lower != prev.upper + 1:
            raise TaxonomyError(f"gap between bands {prev.index} ({prev.label}) and {cur.index} ({cur.label})")


def _validate_weights(token, weights, n):
    if len(weights) != n:
        raise TaxonomyError(f"proxy {token!r}: {len(weights)} weights for {n} categories")
    if any(w < 0 for w in weights):
        raise TaxonomyError(f"proxy {token!r}: negative weight")
    if abs(sum(weights) - 1.0) > 1e-9:
        raise TaxonomyError(f"proxy {token!r}: weights sum to {sum(weights)!r}, not 1")


def _parse_bound(text: str) -> int | None:
    text = text.strip()
    if text == "*":
        return None
    return int(text)


def _parse_number(text: str) -> Fraction:
    # accepts "0.25" as well as exact rationals like "1/3"
    return Fraction(text.strip())


def _default_taxonomy() -> AgeTaxonomy:
    edges = [(None, 11), (12, 13), (14, 15), (16, 17), (18, 24),
             (25, 34), (35, 44), (45, 54), (55, 64), (65, None)]
    bands = tuple(Band(i, lo, hi) for i, (lo, hi) in enumerate(edges))
    third = 1.0 / 3.0
    proxies = {
        "retired": (0.0,) * 9 + (1.0,),
        "grandparent": (0.0,) * 7 + (third, third, third),
    }
    return AgeTaxonomy(bands, proxies)


DEFAULT_TAXONOMY = _default_taxonomy()


def load_taxonomy(definition_text: str | None = None) -> AgeTaxonomy:
    """Parse a taxonomy definition; ``None`` returns the built-in 10-band scheme.

    Lines are ``index<TAB>lower<TAB>upper`` (``*`` for an open bound) or
    ``proxy<TAB>token<TAB>w0,w1,...``. Blank lines and ``#`` comments are skipped.
    """
    if definition_text is None:
        return DEFAULT_TAXONOMY
    bands = []
    proxies = {}
    for lineno, raw in enumerate(definition_text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split("\t")]
        try:
            if parts[0] == "proxy":
                if len(parts) != 3:
                    raise ValueError("expected proxy<TAB>token<TAB>weights")
                exact = [_parse_number(w) for w in parts[2].split(",")]
                if sum(exact) != 1 and abs(float(sum(exact)) - 1.0) > 1e-9:
                    raise TaxonomyError(f"proxy {parts[1]!r}: weights sum to {float(sum(exact))!r}, not 1")
                proxies[parts[1]] = tuple(float(w) for w in exact)
            else:
                if len(parts) != 3:
                    raise ValueError("expected index<TAB>lower<TAB>upper")
                bands.append(Band(int(parts[0]), _parse_bound(parts[1]), _parse_bound(parts[2])))
        except TaxonomyError:
            raise
        except ValueError as exc:
            raise TaxonomyError(f"line {lineno}: {exc}: {raw!r}") from None
    return AgeTaxonomy(tuple(bands), proxies)


def read_taxonomy(path: str | Path | None) -> AgeTaxonomy:
    if path is None:
        return DEFAULT_TAXONOMY
    return load_taxonomy(Path(path).read_text(encoding="utf-8"))


def years_to_category(t: AgeTaxonomy, age_years: int) -> int:
    if age_years < 0:
        raise TaxonomyError(f"negative age {age_years}")
    for band in t.bands:
        if band.contains(age_years):
            return band.index
    raise TaxonomyError(f"age {age_years} is outside every band")


def proxy_to_weights(t: AgeTaxonomy, token: str) -> np.ndarray:
    try:
        return np.array(t.proxy_rules[token], dtype=float)
    except KeyError:
        raise TaxonomyError(f"unknown proxy token {token!r}") from None


def validate_prior(pi, n_categories: int) -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (n_categories,):
        raise TaxonomyError(f"prior has {pi.size} entries for {n_categories} categories")
    if np.any(pi < 0) or not np.all(np.isfinite(pi)):
        raise TaxonomyError("prior entries must be finite and non-negative")
    if abs(pi.sum() - 1.0) > 1e-9:
        raise TaxonomyError(f"prior sums to {pi.sum()!r}, not 1")
    return pi


def default_prior(t: AgeTaxonomy, prior_path: str | Path | None = None) -> np.ndarray:
    """Prior over categories: built in for the default bands, read from a file otherwise."""
    if prior_path is not None:
        return read_prior(prior_path, len(t))
    if not t.is_default():
        raise TaxonomyError("non-default taxonomy: supply a prior file (one probability per line)")
    return np.array([Fraction(p, 100) for p in _DEFAULT_PRIOR_PERCENT], dtype=float)


def read_prior(path: str | Path, n_categories: int) -> np.ndarray:
    values = []
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            values.append(float(_parse_number(line)))
    return validate_prior(values, n_categories)
