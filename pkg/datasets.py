"""
Count data: the `x,count` text format and the embedded drosophila tables.
"""

import csv
import io
import logging
import os
from dataclasses import dataclass

from errors import BadParameter, EmptyData, ParseError, UnknownDataset
from estimation import FrequencyTable

logger = logging.getLogger(__name__)

HEADER = ("x", "count")


@dataclass(frozen=True)
class Dataset:
    name: str
    table: FrequencyTable
    provenance: str


def _parse_int(text, what, line_number):
    text = text.strip()
    try:
        value = int(text)
    except ValueError:
        raise ParseError(f"{what} '{text}' is not an integer", line_number) from None
    if value < 0:
        raise ParseError(f"{what} {value} is negative", line_number)
    return value


def _read_rows(stream):
    counts = []
    for line_number, row in enumerate(csv.reader(stream), start=1):
        if not row or all(not cell.strip() for cell in row) or row[0].lstrip().startswith("#"):
            continue
        if len(row) != 2:
            raise ParseError(f"expected 2 columns, found {len(row)}", line_number)
        if not counts and line_number == 1 and not row[0].strip().lstrip("-").isdigit():
            logger.debug("skipping header %s", row)
            continue
        x = _parse_int(row[0], "cell", line_number)
        count = _parse_int(row[1], "count", line_number)
        counts.append((x, count))
    return counts


def parse_counts(source):
    """Read a FrequencyTable from a path or a text stream of `x,count` rows"""
    if isinstance(source, (str, os.PathLike)):
        with open(source, "r", encoding="utf-8", newline="") as fh:
            rows = _read_rows(fh)
    else:
        rows = _read_rows(source)
    if not rows or sum(c for _, c in rows) == 0:
        raise EmptyData("no observations in count data")
    return FrequencyTable(tuple(rows))


def parse_counts_text(text):
    return parse_counts(io.StringIO(text))


def write_counts(table, target, header=True):
    """Write a FrequencyTable as `x,count` rows to a path or stream"""
    def _write(fh):
        writer = csv.writer(fh, lineterminator="\n")
        if header:
            writer.writerow(HEADER)
        writer.writerows(table.counts)

    if isinstance(target, (str, os.PathLike)):
        with open(target, "w", encoding="utf-8", newline="") as fh:
            _write(fh)
    else:
        _write(target)


def parse_cell_list(text):
    """'6,7' -> {6, 7}; an empty string gives the empty set"""
    cells = set()
    for part in (text or "").split(","):
        part = part.strip()
        if not part:
            continue
        try:
            cells.add(int(part))
        except ValueError:
            raise BadParameter(f"cell '{part}' is not an integer") from None
    return cells


class DatasetManager:
    """Embedded tables plus the loaders the command line uses"""

    def __init__(self):
        self.datasets = self.create_builtin_datasets()

    @staticmethod
    def create_builtin_datasets():
        """Drosophila recessive lethal counts as published"""
        provenance = (
            "Woodruff et al. (1984), sex-linked recessive lethal test in drosophila; "
            "counts of daughters carrying a recessive lethal per exposed male"
        )
        return {
            "drosophila_one": Dataset(
                "drosophila_one",
                FrequencyTable.from_mapping({0: 23, 1: 3, 3: 1, 4: 1}),
                provenance + " (one-sample experiment)",
            ),
            "drosophila_control": Dataset(
                "drosophila_control",
                FrequencyTable.from_mapping({0: 159, 1: 15, 2: 3}),
                provenance + " (control group)",
            ),
            "drosophila_treated": Dataset(
                "drosophila_treated",
                FrequencyTable.from_mapping({0: 110, 1: 11, 2: 5, 6: 1, 7: 1}),
                provenance + " (treated group)",
            ),
        }

    def names(self):
        return sorted(self.datasets)

    def builtin_dataset(self, name):
        try:
            return self.datasets[name]
        except KeyError:
            raise UnknownDataset(f"unknown dataset '{name}'; choose from {self.names()}") from None

    def load(self, data=None, builtin=None, drop_cells=None):
        """Resolve --data/--builtin into a table, removing any cells listed for deletion"""
        if (data is None) == (builtin is None):
            raise BadParameter("give exactly one of a data file or a built-in dataset name")
        table = parse_counts(data) if data is not None else self.builtin_dataset(builtin).table
        if drop_cells:
            table = table.drop_cells(drop_cells)
            logger.info("dropped cells %s, n=%d remain", sorted(drop_cells), table.n)
        return table


def builtin_dataset(name):
    return DatasetManager().builtin_dataset(name)
