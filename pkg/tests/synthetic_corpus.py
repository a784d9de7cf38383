"""
Thirty-table "List of ..." corpus with hand-derived labels.

Every subject has one parent table (Country, Code and a measurement column)
and two child tables constrained by a country that occurs in the parent's
Country column. Only (parent, country) is interesting.
"""

import json
from pathlib import Path
from typing import Dict, List, Tuple

from CatMiner.models import Label

# plural subject, header of the subject column, country -> rows in the parent
SUBJECTS: Tuple[Tuple[str, str, Dict[str, int]], ...] = (
    ("Rivers", "River", {"France": 3, "Spain": 3, "Italy": 2}),
    ("Bridges", "Bridge", {"Japan": 4, "Peru": 2, "Chile": 2}),
    ("Lakes", "Lake", {"Canada": 5, "Norway": 3}),
    ("Castles", "Castle", {"Spain": 2, "France": 2, "Italy": 2, "Norway": 2}),
    ("Airports", "Airport", {"India": 4, "Brazil": 4}),
    ("Museums", "Museum", {"Egypt": 3, "Kenya": 2, "Peru": 2, "Chile": 1}),
    ("Stadiums", "Stadium", {"Brazil": 5, "Spain": 2, "Japan": 1}),
    ("Islands", "Island", {"Norway": 6, "Canada": 2}),
    ("Towers", "Tower", {"Japan": 3, "India": 3, "Egypt": 1, "Kenya": 1}),
    ("Glaciers", "Glacier", {"Chile": 4, "Peru": 3, "Canada": 1}),
)

CODES = ("Amber", "Birch", "Cedar", "Dune", "Ember", "Fjord", "Grove", "Heath")
CITIES = ("Lyon", "Porto", "Quito", "Osaka", "Lima", "Oslo", "Delhi", "Cusco")


def _slug(text: str) -> str:
    return text.lower().replace(" ", "-")


def build_synthetic_corpus() -> Tuple[List[dict], Dict[Tuple[str, str], Label]]:
    """Canonical corpus entries plus the expected label per (table id, attribute)."""
    entries: List[dict] = []
    expected: Dict[Tuple[str, str], Label] = {}

    for number, (plural, singular, countries) in enumerate(SUBJECTS):
        country_cells = [country for country, count in countries.items() for _ in range(count)]
        parent_id = f"{_slug(plural)}-parent"
        entries.append(
            {
                "id": parent_id,
                "page_title": f"List of {plural.lower()}",
                "caption": None,
                "sortable": True,
                "headers": [singular, "Country", "Code", "Height"],
                "rows": [
                    [f"{singular} {CODES[i]}", country, CODES[i], f"{1_000 + 137 * i + number:,} m"]
                    for i, country in enumerate(country_cells)
                ],
            }
        )
        expected[(parent_id, "country")] = Label.INTERESTING
        expected[(parent_id, "code")] = Label.NON_INTERESTING

        for offset, country in enumerate(list(countries)[:2]):
            child_id = f"{_slug(plural)}-{_slug(country)}"
            cities = [CITIES[(number + offset + i) % len(CITIES)] for i in range(4)]
            entries.append(
                {
                    "id": child_id,
                    "page_title": f"List of {plural.lower()} in {country}",
                    "caption": None,
                    "sortable": False,
                    "headers": [singular, "City", "Height"],
                    "rows": [
                        [f"{singular} of {city}", city, f"{200 + 31 * i} m"] for i, city in enumerate(cities)
                    ],
                }
            )
            expected[(child_id, "city")] = Label.NON_INTERESTING

    return entries, expected


def write_synthetic_corpus(path: Path) -> Dict[Tuple[str, str], Label]:
    entries, expected = build_synthetic_corpus()
    path.write_text(json.dumps(entries, indent=2), encoding="utf-8")
    return expected
