"""Published SFC latency measurements (seconds) and the speedups derived from them.

Rows are (cores, network size, mode, latency). The serial baseline was measured
once and is repeated for every core count.
"""

from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass

from .errors import FixtureCorrupted

MODES = ("Serial", "Theoretical", "NFP")
CORES = (2, 4, 8)
SIZES = (50, 100, 150, 200, 250)

_SERIAL = {250: "10.1", 200: "4.87", 150: "1.58", 100: "0.98", 50: "0.45"}
_THEORETICAL = {
    2: {250: "9", 200: "4.26", 150: "1.53", 100: "0.67", 50: "0.28"},
    4: {250: "6.1", 200: "2.96", 150: "1.03", 100: "0.57", 50: "0.18"},
    8: {250: "4.1", 200: "2.07", 150: "0.58", 100: "0.28", 50: "0.12"},
}
_NFP = {
    2: {250: "6.05", 200: "2.72", 150: "1.12", 100: "0.56", 50: "0.23"},
    4: {250: "4.05", 200: "1.62", 150: "0.72", 100: "0.41", 50: "0.13"},
    8: {250: "2.95", 200: "1.82", 150: "0.46", 100: "0.21", 50: "0.10"},
}


def _render():
    lines = ["cores,network_size,mode,latency"]
    for c in CORES:
        for s in SIZES:
            lines.append(f"{c},{s},Serial,{_SERIAL[s]}")
            lines.append(f"{c},{s},Theoretical,{_THEORETICAL[c][s]}")
            lines.append(f"{c},{s},NFP,{_NFP[c][s]}")
    return "\n".join(lines) + "\n"


FIXTURE_CSV = _render()
FIXTURE_SHA256 = "b09e9b0b59ad6837788e1c3286613c355f6f019b06e908da1d5a642de00e426f"


@dataclass(frozen=True)
class FixtureRow:
    cores: int
    network_size: int
    mode: str
    latency: float


@dataclass
class Fig3Fixture:
    rows: list

    def latency(self, cores, size, mode):
        for r in self.rows:
            if (r.cores, r.network_size, r.mode) == (cores, size, mode):
                return r.latency
        raise KeyError((cores, size, mode))


def load_fixture(text: str = FIXTURE_CSV, checksum: str = FIXTURE_SHA256) -> Fig3Fixture:
    if hashlib.sha256(text.encode()).hexdigest() != checksum:
        raise FixtureCorrupted("embedded latency data failed its checksum")
    rows = [
        FixtureRow(int(r["cores"]), int(r["network_size"]), r["mode"], float(r["latency"]))
        for r in csv.DictReader(io.StringIO(text))
    ]
    if len(rows) != len(CORES) * len(SIZES) * len(MODES):
        raise FixtureCorrupted(f"expected 45 rows, found {len(rows)}")
    return Fig3Fixture(rows)


@dataclass(frozen=True)
class GainRow:
    cores: int
    network_size: int
    gain_theoretical_over_nfp: float
    gain_serial_over_nfp: float


def compute_gains(f: Fig3Fixture) -> list[GainRow]:
    out = []
    for c in CORES:
        for s in SIZES:
            nfp = f.latency(c, s, "NFP")
            out.append(GainRow(c, s, f.latency(c, s, "Theoretical") / nfp, f.latency(c, s, "Serial") / nfp))
    return out


GAIN_COLUMNS = ["cores", "network_size", "gain_theoretical_over_nfp", "gain_serial_over_nfp"]


def write_gains(rows: list[GainRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(GAIN_COLUMNS)
    for r in rows:
        w.writerow([r.cores, r.network_size, f"{r.gain_theoretical_over_nfp:.6f}", f"{r.gain_serial_over_nfp:.6f}"])
    return buf.getvalue()
