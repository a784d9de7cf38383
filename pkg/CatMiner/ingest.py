"""
Corpus ingestion: canonical JSON and wiki-table markup in, TableRecords out.

A page is only kept when its title reads "List of <subject> [in|of|by|at|from <constraint>]...".
Its columns are split into the subject column, numeric columns (dropped from
sampling) and categorical columns.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import mwparserfromhell
from pydantic import BaseModel, ConfigDict, TypeAdapter, ValidationError, model_validator

from .errors import CorpusError, UsageError
from .models import Column, ColumnKind, TableMeta, TableRecord, normalize_value

logger = logging.getLogger(__name__)

PREPOSITIONS = frozenset({"of", "in", "by", "at", "from"})
ARTICLES = frozenset({"the", "a", "an"})
STOPWORDS = PREPOSITIONS | ARTICLES | frozenset({"and", "or", "list", "for", "with", "on", "to"})
RANK_HEADERS = frozenset({"rank", "#", "no", "no.", "pos", "pos.", "position", "rk"})
NUMERIC_THRESHOLD = 0.8
DEFAULT_UNITS_PATH = Path(__file__).with_name("units.txt")

_NUMBER = re.compile(r"^[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:e[+-]?\d+)?$")
_FOOTNOTE = re.compile(r"\[[^\]]*\]")
_THOUSANDS = re.compile(r"(?<=\d)[,  '](?=\d{3}(?!\d))")
_RANGE = re.compile(r"[–—−~]|(?<=\d)-(?=\d)|\bto\b")
_WORD = re.compile(r"[^\W_]+(?:['’][^\W_]+)*")
_PAGE_HEADING = re.compile(r"^=(?!=)\s*(.+?)\s*=\s*$", re.MULTILINE)


@dataclass(frozen=True)
class RawTable:
    page_title: str
    headers: Tuple[str, ...]
    rows: Tuple[Tuple[str, ...], ...]
    caption: Optional[str] = None
    sortable: bool = False
    table_id: str = ""

    def __post_init__(self) -> None:
        for index, row in enumerate(self.rows):
            if len(row) != len(self.headers):
                raise CorpusError(
                    f"{self.table_id or self.page_title}: row {index} has {len(row)} cells, "
                    f"expected {len(self.headers)}"
                )

    def column(self, index: int) -> List[str]:
        return [row[index] for row in self.rows]

    def to_dict(self) -> dict:
        return {
            "id": self.table_id,
            "page_title": self.page_title,
            "caption": self.caption,
            "sortable": self.sortable,
            "headers": list(self.headers),
            "rows": [list(row) for row in self.rows],
        }


@dataclass(frozen=True)
class TitleMeta:
    subject_phrase: str
    constraints: Tuple[str, ...] = ()


@dataclass(frozen=True)
class UnitsDictionary:
    tokens: frozenset

    def __post_init__(self) -> None:
        if any(token != token.lower() for token in self.tokens):
            raise UsageError("unit tokens must be lowercase")

    @property
    def longest_first(self) -> Tuple[str, ...]:
        return tuple(sorted(self.tokens, key=lambda token: (-len(token), token)))


@dataclass(frozen=True)
class IngestWarning:
    table_id: str
    reason: str

    def to_dict(self) -> dict:
        return asdict(self)


def load_units(path: Optional[Union[str, Path]] = None) -> UnitsDictionary:
    path = Path(path) if path else DEFAULT_UNITS_PATH
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise UsageError(f"cannot read units dictionary {path}: {e}") from e
    tokens = set()
    for line in text.splitlines():
        token = line.split("#", 1)[0].strip()
        if token:
            tokens.add(token.lower())
    logger.debug("Loaded %d unit tokens from %s", len(tokens), path)
    return UnitsDictionary(frozenset(tokens))


# ----------------------------------------------------------------------------
# Titles, stems and subject columns
# ----------------------------------------------------------------------------


def _bare(token: str) -> str:
    return token.strip(".,;:!?()[]\"'").casefold()


def _clean_phrase(tokens: Sequence[str]) -> str:
    words = [token.strip(".,;:!?()[]\"'") for token in tokens]
    words = [word for word in words if word]
    while words and words[0].casefold() in ARTICLES:
        words.pop(0)
    return " ".join(words)


def parse_title(title: str) -> Optional[TitleMeta]:
    """Split a 'List of ...' title into subject phrase and constraints."""
    tokens = (title or "").split()
    if len(tokens) < 3 or _bare(tokens[0]) != "list" or _bare(tokens[1]) != "of":
        return None
    segments: List[List[str]] = [[]]
    for token in tokens[2:]:
        if _bare(token) in PREPOSITIONS:
            segments.append([])
        else:
            segments[-1].append(token)
    subject = _clean_phrase(segments[0])
    if not subject:
        return None
    constraints = tuple(c for c in (_clean_phrase(segment) for segment in segments[1:]) if c)
    return TitleMeta(subject_phrase=subject, constraints=constraints)


def stem(word: str) -> str:
    """Suffix-stripping plural stemmer: cities -> city, churches -> church, buildings -> building."""
    word = word.casefold()
    if len(word) <= 3:
        return word
    if word.endswith("ies") and len(word) > 4:
        return word[:-3] + "y"
    if word.endswith("sses"):
        return word[:-2]
    if word.endswith(("xes", "ches", "shes", "zes")):
        return word[:-2]
    if word.endswith(("ss", "us", "is")):
        return word
    if word.endswith("s"):
        return word[:-1]
    return word


def content_tokens(text: str) -> List[str]:
    return [token for token in _WORD.findall(text or "") if token.casefold() not in STOPWORDS]


def head_noun_stem(phrase: str) -> str:
    """Stem of the last content word; 'Tallest Buildings' and 'buildings' share 'building'."""
    tokens = content_tokens(phrase)
    if not tokens:
        return normalize_value(phrase)
    return stem(tokens[-1])


def _is_rank_column(header: str, cells: Sequence[str], units: UnitsDictionary) -> bool:
    if normalize_value(header) in RANK_HEADERS:
        return is_numeric_column(cells, units)
    values = [_FOOTNOTE.sub("", cell).strip().lstrip("=T") for cell in cells if cell.strip()]
    if not values or not all(value.isdigit() for value in values):
        return False
    return max(int(value) for value in values) <= 2 * len(cells)


def _rank_neighbour(raw: RawTable, units: Optional[UnitsDictionary] = None) -> int:
    units = units or load_units()
    for index, header in enumerate(raw.headers):
        if _is_rank_column(header, raw.column(index), units):
            return index + 1 if index + 1 < len(raw.headers) else 0
    return 0


def match_subject_column(
    raw: RawTable, meta: TitleMeta, units: Optional[UnitsDictionary] = None
) -> Tuple[int, Optional[str]]:
    """
    Index of the subject column and the title word that matched its header.

    The word is None when the ranking-column fallback was used.
    """
    subject_tokens = [(token, stem(token)) for token in content_tokens(meta.subject_phrase)]
    for index, header in enumerate(raw.headers):
        header_stems = {stem(token) for token in content_tokens(header)}
        for token, token_stem in subject_tokens:
            if token_stem in header_stems:
                return index, token
    return _rank_neighbour(raw, units), None


def identify_subject_column(raw: RawTable, meta: TitleMeta, units: Optional[UnitsDictionary] = None) -> int:
    if not raw.headers:
        raise CorpusError(f"{raw.table_id}: table has no columns")
    return match_subject_column(raw, meta, units)[0]


# ----------------------------------------------------------------------------
# Numeric columns
# ----------------------------------------------------------------------------


def _strip_unit(token: str, units: UnitsDictionary) -> Optional[str]:
    if _NUMBER.match(token):
        return token
    for unit in units.longest_first:
        if token.endswith(unit) and _NUMBER.match(token[: -len(unit)]):
            return token[: -len(unit)]
        if token.startswith(unit) and _NUMBER.match(token[len(unit):]):
            return token[len(unit):]
    return None


def is_numeric_cell(cell: str, units: UnitsDictionary) -> bool:
    text = _FOOTNOTE.sub(" ", cell.casefold())
    text = _THOUSANDS.sub("", text)
    text = _RANGE.sub(" ", text)
    residue = []
    for token in (t.strip("()") for t in text.split()):
        if not token or token in units.tokens:
            continue
        number = _strip_unit(token, units)
        if number is None:
            return False
        residue.append(number)
    return bool(residue)


def is_numeric_column(cells: Iterable[str], units: UnitsDictionary) -> bool:
    """True when at least 80% of the non-empty cells are numbers once units are removed."""
    filled = [cell for cell in cells if cell and cell.strip()]
    if not filled:
        return False
    numeric = sum(1 for cell in filled if is_numeric_cell(cell, units))
    return numeric >= NUMERIC_THRESHOLD * len(filled) - 1e-9


def build_table_record(raw: RawTable, units: UnitsDictionary) -> Optional[TableRecord]:
    """Classify the columns of a raw table; None when the title is not a list page."""
    meta = parse_title(raw.page_title)
    if meta is None:
        logger.debug("Rejected title %r", raw.page_title)
        return None
    if not raw.headers:
        logger.warning("Table %s has no columns", raw.table_id)
        return None
    subject_col, matched = match_subject_column(raw, meta, units)
    columns = []
    ranking_criterion = None
    for index, header in enumerate(raw.headers):
        cells = tuple(raw.column(index))
        if index == subject_col:
            kind = ColumnKind.SUBJECT
        elif is_numeric_column(cells, units):
            kind = ColumnKind.NUMERIC
            if ranking_criterion is None and not _is_rank_column(header, cells, units):
                ranking_criterion = header
        else:
            kind = ColumnKind.CATEGORICAL
        columns.append(Column(name=header, kind=kind, cells=cells))
    table_meta = TableMeta(
        constraints=tuple(dict.fromkeys(normalize_value(c) for c in meta.constraints)),
        ranking_criterion=ranking_criterion,
        page_title=raw.page_title,
        caption=raw.caption,
    )
    return TableRecord(
        id=raw.table_id,
        subject=matched or meta.subject_phrase,
        subject_col=subject_col,
        columns=tuple(columns),
        metadata=table_meta,
    )


# ----------------------------------------------------------------------------
# Wiki-table markup
# ----------------------------------------------------------------------------


def _split_blocks(markup: str) -> Tuple[List[str], bool]:
    """Top-level '{|' ... '|}' blocks, and whether the text ends inside one."""
    blocks, current, depth = [], [], 0
    for line in markup.splitlines():
        stripped = line.strip()
        if stripped.startswith("{|"):
            depth += 1
        if depth:
            current.append(line)
        if stripped.startswith("|}") and depth:
            depth -= 1
            if depth == 0:
                blocks.append("\n".join(current))
                current = []
    return blocks, depth > 0


def _cell_text(cell) -> str:
    return " ".join(cell.contents.strip_code(normalize=True, collapse=True).split())


def _tag_name(node) -> str:
    return str(node.tag).strip().lower()


def _table_rows(table) -> List[List[Tuple[str, str]]]:
    """(kind, text) cells per row; cells before the first '|-' form an implicit row."""
    rows: List[List[Tuple[str, str]]] = []
    loose: List[Tuple[str, str]] = []
    for node in table.contents.nodes:
        if not isinstance(node, mwparserfromhell.nodes.Tag):
            continue
        name = _tag_name(node)
        if name in ("th", "td"):
            loose.append((name, _cell_text(node)))
        elif name == "tr":
            if loose:
                rows.append(loose)
                loose = []
            cells = [
                (_tag_name(cell), _cell_text(cell))
                for cell in node.contents.nodes
                if isinstance(cell, mwparserfromhell.nodes.Tag) and _tag_name(cell) in ("th", "td")
            ]
            if cells:
                rows.append(cells)
    if loose:
        rows.append(loose)
    return rows


def _page_slug(page_title: str) -> str:
    return "_".join(page_title.split()) or "page"


def parse_wikitable(
    markup: str, page_title: str = "", warnings: Optional[List[IngestWarning]] = None
) -> List[RawTable]:
    """Extract every class="wikitable" block of a page as a RawTable."""
    warnings = warnings if warnings is not None else []
    slug = _page_slug(page_title)
    blocks, unterminated = _split_blocks(markup or "")
    if unterminated:
        warnings.append(IngestWarning(f"{slug}#{len(blocks)}", "unterminated table"))
        logger.warning("Unterminated table block on page %r", page_title)

    tables = []
    for index, block in enumerate(blocks):
        table_id = f"{slug}#{index}"
        caption = None
        kept_lines = []
        for line in block.splitlines():
            if line.strip().startswith("|+"):
                caption_text = line.strip()[2:]
                caption = " ".join(
                    mwparserfromhell.parse(caption_text).strip_code(normalize=True, collapse=True).split()
                ) or None
            else:
                kept_lines.append(line)
        parsed = mwparserfromhell.parse("\n".join(kept_lines)).filter_tags(
            recursive=False, matches=lambda node: _tag_name(node) == "table"
        )
        if not parsed:
            warnings.append(IngestWarning(table_id, "unparseable table block"))
            continue
        table = parsed[0]
        classes = str(table.get("class").value).lower().split() if table.has("class") else []
        if "wikitable" not in classes:
            logger.debug("Skipping non-wikitable block %s", table_id)
            continue

        rows = _table_rows(table)
        if not rows or any(kind != "th" for kind, _ in rows[0]):
            warnings.append(IngestWarning(table_id, "missing header row"))
            logger.warning("Skipping %s: missing header row", table_id)
            continue
        headers = tuple(text for _, text in rows[0])
        body = [tuple(text for _, text in row) for row in rows[1:]]
        ragged = [i for i, row in enumerate(body) if len(row) != len(headers)]
        if ragged:
            warnings.append(IngestWarning(table_id, f"ragged row {ragged[0]}"))
            logger.warning("Skipping %s: ragged row %d", table_id, ragged[0])
            continue
        tables.append(
            RawTable(
                page_title=page_title,
                headers=headers,
                rows=tuple(body),
                caption=caption,
                sortable="sortable" in classes,
                table_id=table_id,
            )
        )
    return tables


def to_wikitext(raw: RawTable) -> str:
    """Serialize a RawTable as wiki-table markup that parse_wikitable reads back."""
    classes = "wikitable sortable" if raw.sortable else "wikitable"
    lines = [f'{{| class="{classes}"']
    if raw.caption:
        lines.append(f"|+ {raw.caption}")
    lines.append("|-")
    lines.append("! " + " !! ".join(raw.headers))
    for row in raw.rows:
        lines.append("|-")
        lines.append("| " + " || ".join(row))
    lines.append("|}")
    return "\n".join(lines)


def split_pages(text: str, default_title: str) -> List[Tuple[str, str]]:
    """(title, markup) per level-1 '= Title =' heading; the whole text otherwise."""
    headings = list(_PAGE_HEADING.finditer(text))
    if not headings:
        return [(default_title, text)]
    pages = []
    for current, following in zip(headings, headings[1:] + [None]):
        end = following.start() if following else len(text)
        pages.append((current.group(1), text[current.end():end]))
    return pages


# ----------------------------------------------------------------------------
# Canonical JSON corpus
# ----------------------------------------------------------------------------


class CorpusEntry(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: str
    page_title: str
    caption: Optional[str] = None
    sortable: bool = False
    headers: List[str]
    rows: List[List[str]]

    @model_validator(mode="after")
    def _rows_match_headers(self) -> "CorpusEntry":
        for index, row in enumerate(self.rows):
            if len(row) != len(self.headers):
                raise ValueError(f"row {index} has {len(row)} cells, expected {len(self.headers)}")
        return self

    def to_raw(self) -> RawTable:
        return RawTable(
            page_title=self.page_title,
            headers=tuple(self.headers),
            rows=tuple(tuple(row) for row in self.rows),
            caption=self.caption,
            sortable=self.sortable,
            table_id=self.id,
        )


_CORPUS_ADAPTER = TypeAdapter(List[CorpusEntry])


def _format_validation_error(path: Path, error: ValidationError) -> str:
    first = error.errors()[0]
    location = ".".join(str(part) for part in first["loc"])
    return f"{path}: [{location}] {first['msg']}"


def parse_corpus_json(text: str, source: Union[str, Path] = "<corpus>") -> List[RawTable]:
    path = Path(source)
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as e:
        raise CorpusError(f"{path}:{e.lineno}:{e.colno}: invalid JSON: {e.msg}") from e
    try:
        entries = _CORPUS_ADAPTER.validate_python(payload)
    except ValidationError as e:
        raise CorpusError(_format_validation_error(path, e)) from e
    seen = set()
    for index, entry in enumerate(entries):
        if entry.id in seen:
            raise CorpusError(f"{path}: [{index}.id] duplicate table id {entry.id!r}")
        seen.add(entry.id)
    return [entry.to_raw() for entry in entries]


def _read_text(path: Path) -> str:
    try:
        return path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise CorpusError(f"{path}: cannot read: {e}") from e


def _wikitext_files(path: Path) -> List[Path]:
    if path.is_dir():
        return sorted(p for p in path.iterdir() if p.suffix in (".wiki", ".wikitext", ".txt"))
    return [path]


def read_raw_tables(
    path: Union[str, Path], fmt: str = "json", warnings: Optional[List[IngestWarning]] = None
) -> List[RawTable]:
    path = Path(path)
    warnings = warnings if warnings is not None else []
    if not path.exists():
        raise CorpusError(f"{path}: no such file or directory")
    if fmt == "json":
        tables = parse_corpus_json(_read_text(path), path)
    elif fmt == "wikitext":
        tables = []
        for file_path in _wikitext_files(path):
            default_title = file_path.stem.replace("_", " ")
            for title, markup in split_pages(_read_text(file_path), default_title):
                tables.extend(parse_wikitable(markup, title, warnings))
    else:
        raise UsageError(f"unknown corpus format {fmt!r}; expected json or wikitext")
    logger.info("Read %d raw tables from %s (%d warnings)", len(tables), path, len(warnings))
    return sorted(tables, key=lambda table: table.table_id)


def write_canonical_corpus(tables: Iterable[RawTable], path: Union[str, Path]) -> None:
    payload = [table.to_dict() for table in sorted(tables, key=lambda table: table.table_id)]
    Path(path).write_text(json.dumps(payload, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")


def write_warnings(warnings: Iterable[IngestWarning], path: Union[str, Path]) -> None:
    lines = [json.dumps(w.to_dict(), ensure_ascii=False) for w in warnings]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def records_from_raw(
    tables: Iterable[RawTable],
    units: Optional[UnitsDictionary] = None,
    warnings: Optional[List[IngestWarning]] = None,
) -> List[TableRecord]:
    units = units or load_units()
    warnings = warnings if warnings is not None else []
    records = []
    rejected = 0
    for raw in tables:
        if not raw.rows:
            warnings.append(IngestWarning(raw.table_id, "no data rows"))
            continue
        record = build_table_record(raw, units)
        if record is None:
            rejected += 1
            continue
        records.append(record)
    if rejected:
        logger.info("Dropped %d tables whose title is not a 'List of' page", rejected)
    return sorted(records, key=lambda record: record.id)


def load_corpus(
    path: Union[str, Path],
    fmt: str = "json",
    units: Optional[UnitsDictionary] = None,
    warnings: Optional[List[IngestWarning]] = None,
) -> List[TableRecord]:
    warnings = warnings if warnings is not None else []
    records = records_from_raw(read_raw_tables(path, fmt, warnings), units, warnings)
    logger.info("Loaded %d table records from %s", len(records), path)
    return records
