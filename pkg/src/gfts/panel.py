"""Mortality panel data model, file ingestion and a synthetic panel generator.

A panel holds, for every series (an area/sex pair), ``n x p`` matrices of
central death rates, exposures and deaths on a common age grid.  Missing
cells are stored as ``NaN`` in ``rate``.
"""

from __future__ import annotations

import csv
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

logger = logging.getLogger(__name__)

CSV_HEADER = ("series", "sex", "year", "age", "rate", "exposure", "deaths")
SEXES = ("F", "M", "T")
DEFAULT_FLOOR = 1e-7

# prefectures per region, regions numbered north to south
JAPAN_LAYOUT = (1, 6, 7, 9, 7, 5, 4, 8)


class PanelError(ValueError):
    """Base class for panel ingestion and validation errors."""


class StructuralError(PanelError):
    """The panel is well parsed but inconsistent (grids, duplicates...)."""


class ParseError(PanelError):
    """A cell could not be parsed; ``row`` is the 1-based file line."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"line {row}: {message}"
        super().__init__(message)


class SeriesId(NamedTuple):
    area: str
    sex: str

    def __str__(self) -> str:
        return f"{self.area}*{self.sex}"

    @classmethod
    def parse(cls, text: str) -> "SeriesId":
        area, sep, sex = text.strip().rpartition("*")
        if not sep or not area or sex not in SEXES:
            raise ValueError(f"not a series id of the form AREA*SEX: {text!r}")
        return cls(area, sex)


@dataclass(frozen=True)
class AgeGrid:
    """Ordered age midpoints; ``open_last`` marks a final ``x+`` group."""

    ages: np.ndarray
    open_last: bool = False

    def __post_init__(self):
        ages = np.asarray(self.ages, dtype=float)
        if ages.ndim != 1 or ages.size < 2:
            raise StructuralError("an age grid needs at least two ages")
        if np.any(np.diff(ages) <= 0):
            raise StructuralError("ages must be strictly increasing")
        ages.setflags(write=False)
        object.__setattr__(self, "ages", ages)

    @property
    def p(self) -> int:
        return self.ages.size

    def labels(self) -> list[str]:
        out = [_fmt_age(a) for a in self.ages]
        if self.open_last:
            out[-1] += "+"
        return out

    @classmethod
    def single_years(cls, top: int = 100, open_last: bool = True) -> "AgeGrid":
        return cls(np.arange(top + 1, dtype=float), open_last=open_last)

    def __eq__(self, other):
        return (
            isinstance(other, AgeGrid)
            and self.open_last == other.open_last
            and np.array_equal(self.ages, other.ages)
        )

    def __hash__(self):
        return hash((self.ages.tobytes(), self.open_last))


@dataclass(frozen=True)
class SeriesData:
    """Rates, exposures and deaths for one series, each ``n x p``."""

    rate: np.ndarray
    exposure: np.ndarray
    deaths: np.ndarray

    def __post_init__(self):
        for name in ("rate", "exposure", "deaths"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (self.rate.shape == self.exposure.shape == self.deaths.shape):
            raise StructuralError("rate, exposure and deaths must share a shape")

    @property
    def mask(self) -> np.ndarray:
        """True where the rate is observed."""
        return np.isfinite(self.rate)


@dataclass(frozen=True)
class IngestionSummary:
    series_count: int
    year_span: tuple[int, int]
    missing_cells: int

    def __str__(self) -> str:
        return (
            f"{self.series_count} series, years {self.year_span[0]}-{self.year_span[1]}, "
            f"{self.missing_cells} missing cells"
        )


@dataclass(frozen=True)
class MortalityPanel:
    grid: AgeGrid
    years: np.ndarray
    series: Mapping[SeriesId, SeriesData]

    def __post_init__(self):
        years = np.asarray(self.years, dtype=int)
        if years.ndim != 1 or years.size < 1:
            raise StructuralError("a panel needs at least one year")
        if np.any(np.diff(years) <= 0):
            raise StructuralError("years must be strictly increasing")
        years.setflags(write=False)
        object.__setattr__(self, "years", years)
        object.__setattr__(self, "series", dict(self.series))
        shape = (years.size, self.grid.p)
        for sid, data in self.series.items():
            if data.rate.shape != shape:
                raise StructuralError(
                    f"series {sid} has shape {data.rate.shape}, expected {shape}"
                )
            observed = data.mask
            if np.any(data.exposure[observed] <= 0):
                raise StructuralError(f"series {sid}: observed rate with exposure <= 0")
            if np.any(data.deaths[np.isfinite(data.deaths)] < 0):
                raise StructuralError(f"series {sid}: negative deaths")

    @property
    def n(self) -> int:
        return self.years.size

    @property
    def p(self) -> int:
        return self.grid.p

    @property
    def ids(self) -> list[SeriesId]:
        return list(self.series)

    def __getitem__(self, sid: SeriesId) -> SeriesData:
        return self.series[sid]

    def summary(self) -> IngestionSummary:
        missing = sum(int((~d.mask).sum()) for d in self.series.values())
        return IngestionSummary(
            len(self.series), (int(self.years[0]), int(self.years[-1])), missing
        )

    def subset_years(self, stop: int) -> "MortalityPanel":
        """Panel restricted to the first ``stop`` years."""
        return MortalityPanel(
            self.grid,
            self.years[:stop],
            {
                sid: SeriesData(d.rate[:stop], d.exposure[:stop], d.deaths[:stop])
                for sid, d in self.series.items()
            },
        )


@dataclass(frozen=True)
class LogCurveSeries:
    """Log rates ``y_t(x_i)``; ``mask`` is True where observed."""

    values: np.ndarray
    mask: np.ndarray


def _fmt_age(a: float) -> str:
    return str(int(a)) if float(a).is_integer() else repr(float(a))


def _parse_float(text: str, what: str, row: int) -> float:
    text = text.strip()
    if text in ("", ".", "NA", "nan", "NaN"):
        return math.nan
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"non-numeric {what} {text!r}", row) from None


def _parse_age(text: str, row: int) -> tuple[float, bool]:
    text = text.strip()
    is_open = text.endswith("+")
    value = _parse_float(text.rstrip("+"), "age", row)
    if math.isnan(value):
        raise ParseError("missing age", row)
    return value, is_open


def _reconcile_cell(rate, exposure, deaths):
    """Fill the missing member of (rate, exposure, deaths) and mask zero exposure."""
    if not math.isnan(exposure) and exposure <= 0:
        return math.nan, exposure, deaths
    if math.isnan(rate) and not math.isnan(deaths) and not math.isnan(exposure):
        rate = deaths / exposure
    if not math.isnan(rate) and not math.isnan(exposure):
        implied = rate * exposure
        if not math.isnan(deaths) and abs(implied - deaths) > 1e-3 * max(abs(deaths), 1.0):
            return None
        deaths = implied
    return rate, exposure, deaths


def load_panel(path: str | Path, schema: str = "csv", **kwargs) -> MortalityPanel:
    """Read a mortality panel from disk.

    Parameters
    ----------
    path : path-like
        For ``schema="csv"`` a long-format file with header
        ``series,sex,year,age,rate,exposure,deaths``.  For ``schema="hmd"``
        the ``Mx_1x1`` rate file; the matching exposure file is passed as
        ``exposures=`` (defaults to the sibling ``Exposures_1x1`` file).
    schema : {"csv", "hmd"}

    Returns
    -------
    MortalityPanel
        Cells with zero exposure are masked (rate ``NaN``), never dropped.

    Raises
    ------
    FileNotFoundError, ParseError, StructuralError
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    if schema == "csv":
        panel = _load_csv(path)
    elif schema == "hmd":
        exposures = kwargs.pop("exposures", None)
        if exposures is None:
            exposures = path.with_name(path.name.replace("Mx", "Exposures"))
        panel = read_hmd(path, exposures, **kwargs)
    else:
        raise ValueError(f"unknown panel schema {schema!r}")
    logger.info("loaded %s: %s", path, panel.summary())
    return panel


def _load_csv(path: Path) -> MortalityPanel:
    cells: dict[SeriesId, dict[tuple[int, float], tuple[float, float, float]]] = {}
    open_ages: set[float] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise ParseError(f"header must be {','.join(CSV_HEADER)}", 1)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(CSV_HEADER):
                raise ParseError(f"expected {len(CSV_HEADER)} fields, got {len(row)}", lineno)
            area, sex = row[0].strip(), row[1].strip()
            if sex not in SEXES:
                raise ParseError(f"sex must be one of {SEXES}, got {sex!r}", lineno)
            year = _parse_float(row[2], "year", lineno)
            if math.isnan(year) or not float(year).is_integer():
                raise ParseError(f"year must be an integer, got {row[2]!r}", lineno)
            age, is_open = _parse_age(row[3], lineno)
            if is_open:
                open_ages.add(age)
            values = tuple(_parse_float(row[k], CSV_HEADER[k], lineno) for k in (4, 5, 6))
            fixed = _reconcile_cell(*values)
            if fixed is None:
                raise StructuralError(f"line {lineno}: rate x exposure disagrees with deaths")
            sid = SeriesId(area, sex)
            key = (int(year), age)
            bucket = cells.setdefault(sid, {})
            if key in bucket:
                raise StructuralError(f"line {lineno}: duplicate cell ({sid}, {key[0]}, {_fmt_age(age)})")
            bucket[key] = fixed
    if not cells:
        raise StructuralError(f"{path} contains no data rows")
    return _assemble(cells, open_ages)


def _assemble(cells, open_ages) -> MortalityPanel:
    first = next(iter(cells.values()))
    years = sorted({y for y, _ in first})
    ages = sorted({a for _, a in first})
    for sid, bucket in cells.items():
        if sorted({a for _, a in bucket}) != ages:
            raise StructuralError(f"series {sid} has a different age grid")
        if sorted({y for y, _ in bucket}) != years:
            raise StructuralError(f"series {sid} covers different years")
        if len(bucket) != len(years) * len(ages):
            raise StructuralError(f"series {sid} is not a complete year x age table")
    if open_ages and open_ages != {ages[-1]}:
        raise StructuralError("only the last age group may be open-ended")
    grid = AgeGrid(np.array(ages), open_last=bool(open_ages))
    yidx = {y: i for i, y in enumerate(years)}
    aidx = {a: j for j, a in enumerate(ages)}
    series = {}
    for sid, bucket in cells.items():
        arr = np.full((3, len(years), len(ages)), np.nan)
        for (y, a), vals in bucket.items():
            arr[:, yidx[y], aidx[a]] = vals
        series[sid] = SeriesData(arr[0], arr[1], arr[2])
    return MortalityPanel(grid, np.array(years), series)


def save_panel(panel: MortalityPanel, path: str | Path) -> None:
    """Write ``panel`` in the long CSV schema read by :func:`load_panel`."""
    labels = panel.grid.labels()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for sid, data in panel.series.items():
            for t, year in enumerate(panel.years):
                for i, label in enumerate(labels):
                    writer.writerow(
                        [
                            sid.area,
                            sid.sex,
                            int(year),
                            label,
                            _fmt_num(data.rate[t, i]),
                            _fmt_num(data.exposure[t, i]),
                            _fmt_num(data.deaths[t, i]),
                        ]
                    )


def _fmt_num(x: float) -> str:
    return "" if not np.isfinite(x) else repr(float(x))


_HMD_ROW = re.compile(r"^\s*(\d{4})\s+(\d+\+?)\s+(\S+)\s+(\S+)\s+(\S+)\s*$")


def _read_hmd_table(path: Path) -> dict[tuple[int, str], tuple[float, float, float]]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            m = _HMD_ROW.match(line)
            if not m:
                continue
            year, age = int(m.group(1)), m.group(2)
            vals = tuple(_parse_float(m.group(k), "value", lineno) for k in (3, 4, 5))
            out[(year, age)] = vals
    if not out:
        raise ParseError(f"{path}: no 'Year Age Female Male Total' rows found")
    return out


def read_hmd(
    rates_path: str | Path,
    exposures_path: str | Path,
    area: str = "Japan",
    top_age: int | None = 100,
) -> MortalityPanel:
    """Read an HMD/JMD ``Mx_1x1`` + ``Exposures_1x1`` pair.

    Ages at and above ``top_age`` are merged into one open group using
    exposure-weighted rates.  Produces the ``F``, ``M`` and ``T`` series
    of ``area``.
    """
    rates = _read_hmd_table(Path(rates_path))
    expo = _read_hmd_table(Path(exposures_path))
    if rates.keys() != expo.keys():
        raise StructuralError("rate and exposure files cover different cells")
    years = sorted({y for y, _ in rates})
    raw_ages = sorted({a for _, a in rates}, key=lambda s: int(s.rstrip("+")))
    ages = [int(a.rstrip("+")) for a in raw_ages]
    if top_age is None or top_age >= ages[-1]:
        groups = [[a] for a in raw_ages]
        open_last = raw_ages[-1].endswith("+")
    else:
        groups = [[a] for a, v in zip(raw_ages, ages) if v < top_age]
        groups.append([a for a, v in zip(raw_ages, ages) if v >= top_age])
        open_last = True
    grid_ages = np.array([int(g[0].rstrip("+")) for g in groups], dtype=float)
    grid = AgeGrid(grid_ages, open_last=open_last)
    series = {}
    for col, sex in enumerate(("F", "M", "T")):
        rate = np.full((len(years), len(groups)), np.nan)
        expos = np.zeros_like(rate)
        deaths = np.zeros_like(rate)
        for t, y in enumerate(years):
            for j, group in enumerate(groups):
                e = np.array([expo[(y, a)][col] for a in group])
                m = np.array([rates[(y, a)][col] for a in group])
                ok = np.isfinite(m) & np.isfinite(e) & (e > 0)
                expos[t, j] = np.nansum(np.where(np.isfinite(e), e, 0.0))
                if ok.any():
                    deaths[t, j] = float(np.sum(m[ok] * e[ok]))
                    rate[t, j] = deaths[t, j] / float(np.sum(e[ok]))
                else:
                    deaths[t, j] = np.nan
        series[SeriesId(area, sex)] = SeriesData(rate, expos, deaths)
    return MortalityPanel(grid, np.array(years), series)


def to_log(panel: MortalityPanel, floor: float = DEFAULT_FLOOR) -> dict[SeriesId, LogCurveSeries]:
    """Log rates ``ln(max(rate, floor))``; missing cells stay ``NaN``."""
    if not floor > 0:
        raise ValueError("floor must be positive")
    out = {}
    for sid, data in panel.series.items():
        mask = data.mask
        values = np.full(data.rate.shape, np.nan)
        values[mask] = np.log(np.maximum(data.rate[mask], floor))
        out[sid] = LogCurveSeries(values, mask)
    return out


# ---------------------------------------------------------------------------
# synthetic panels
# ---------------------------------------------------------------------------

DYNAMICS = ("white", "ar1", "rwd")


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a coherent synthetic panel.

    The geography has three levels: a top area, ``len(layout)`` regions and
    ``sum(layout)`` prefectures, where ``layout[r]`` is the number of
    prefectures in region ``r``.  Bottom series are prefecture x sex; every
    other series (sex totals, regions, the top area) is an exact
    exposure-weighted aggregate.

    Bottom log rates are ``mean_j(x) + sum_k beta_jtk * load_jk * phi_k(x)``
    plus optional noise.  Scores of series ``j`` mix common and idiosyncratic
    paths, ``dependence * common + sqrt(1 - dependence**2) * own``.

    With ``noise_level == 0`` everything is deterministic given the seed and
    deaths equal ``rate * exposure`` exactly; otherwise iid Gaussian noise of
    that standard deviation is added on the log scale and, if ``poisson``,
    deaths are drawn Poisson(rate x exposure).
    """

    layout: tuple[int, ...] = (2, 2)
    n: int = 30
    ages: int = 101
    first_year: int = 1975
    K_true: int = 2
    dynamics: str = "rwd"
    phi: float = 0.8
    drift: float = -0.015
    score_sd: float | tuple[float, ...] = 0.02
    dependence: float = 0.9
    loading_spread: float = 0.1
    area_effect: float = 0.05
    exposure_scale: float = 2e4
    noise_level: float = 0.0
    poisson: bool = True
    outlier_years: tuple[int, ...] = ()
    outlier_areas: int = 0
    outlier_size: float = 0.3
    top: str = "Japan"

    def validate(self):
        if self.n < 2 or self.ages < 2:
            raise ValueError("need n >= 2 years and at least 2 ages")
        if not 1 <= self.K_true < min(self.n, self.ages):
            raise ValueError("K_true must satisfy 1 <= K_true < min(n, p)")
        if self.dynamics not in DYNAMICS:
            raise ValueError(f"dynamics must be one of {DYNAMICS}")
        if not self.layout or min(self.layout) < 1:
            raise ValueError("layout needs at least one region with >= 1 prefecture")
        if not 0.0 <= self.dependence <= 1.0:
            raise ValueError("dependence must lie in [0, 1]")
        if self.outlier_areas > sum(self.layout):
            raise ValueError("more outlier areas than prefectures")
        if any(not 0 <= y < self.n for y in self.outlier_years):
            raise ValueError("outlier years are 0-based indices into the sample")
        if self.noise_level < 0:
            raise ValueError("noise_level must be >= 0")


@dataclass
class SyntheticTruth:
    bottom: list[SeriesId]
    basis: np.ndarray  # K x p, orthonormal rows
    common_scores: np.ndarray  # n x K
    mean: dict[SeriesId, np.ndarray] = field(default_factory=dict)
    components: dict[SeriesId, np.ndarray] = field(default_factory=dict)  # K x p
    scores: dict[SeriesId, np.ndarray] = field(default_factory=dict)  # n x K
    log_rate: dict[SeriesId, np.ndarray] = field(default_factory=dict)  # noise-free
    outlier_areas: list[str] = field(default_factory=list)


def layout_areas(layout: Sequence[int]) -> tuple[list[str], dict[str, str]]:
    """Region labels and the prefecture -> region map for a layout."""
    regions = [f"R{r + 1}" for r in range(len(layout))]
    parent = {}
    k = 0
    for r, count in enumerate(layout):
        for _ in range(count):
            k += 1
            parent[f"P{k}"] = regions[r]
    return regions, parent


def _smooth_basis(K: int, u: np.ndarray) -> np.ndarray:
    raw = [1.0 - 0.6 * u, np.sin(np.pi * u), np.cos(2 * np.pi * u), np.sin(3 * np.pi * u)]
    k = 2
    while len(raw) < K:
        raw.append(np.cos((k + 1) * np.pi * u))
        k += 1
    q, _ = np.linalg.qr(np.column_stack(raw[:K]))
    # sign: largest-magnitude entry positive
    idx = np.argmax(np.abs(q), axis=0)
    q = q * np.sign(q[idx, np.arange(K)])
    return q.T


def _baseline(x: np.ndarray) -> np.ndarray:
    # J shape: infant decay, accident hump, Gompertz rise
    return (
        -9.6
        + 0.085 * x
        + 3.0 * np.exp(-x / 30.0)
        + 0.25 * np.exp(-(((x - 22.0) / 20.0) ** 2))
    )


def _simulate_scores(spec: SyntheticSpec, rng, sd: np.ndarray, drift: bool) -> np.ndarray:
    K, n = spec.K_true, spec.n
    e = rng.standard_normal((n, K)) * sd
    if spec.dynamics == "white":
        return e
    out = np.zeros((n, K))
    if spec.dynamics == "ar1":
        out[0] = e[0] / math.sqrt(max(1.0 - spec.phi**2, 1e-12))
        for t in range(1, n):
            out[t] = spec.phi * out[t - 1] + e[t]
        return out
    step = e.copy()
    if drift:
        step[:, 0] += spec.drift * math.sqrt(spec.ages)
    return np.cumsum(step, axis=0)


def synthesize_panel(spec: SyntheticSpec, seed: int) -> tuple[MortalityPanel, SyntheticTruth]:
    """Generate a coherent grouped mortality panel and its ground truth."""
    spec.validate()
    rng = np.random.default_rng(seed)
    p, n, K = spec.ages, spec.n, spec.K_true
    x = np.arange(p, dtype=float)
    u = x / max(p - 1, 1)
    grid = AgeGrid(x, open_last=(p == 101))
    years = spec.first_year + np.arange(n)

    regions, region_of = layout_areas(spec.layout)
    prefectures = list(region_of)
    bottom = [SeriesId(a, s) for a in prefectures for s in ("F", "M")]

    basis = _smooth_basis(K, u)
    # score units: a unit innovation moves the curve by ~score_sd on average
    sd = np.broadcast_to(np.asarray(spec.score_sd, dtype=float), (K,)) * math.sqrt(p)
    common = _simulate_scores(spec, rng, sd, drift=True)

    truth = SyntheticTruth(bottom=bottom, basis=basis, common_scores=common)
    base = _baseline(x)
    male_shift = 0.25 + 0.25 * np.exp(-(((x - 25.0) / 20.0) ** 2))
    area_shape = 1.0 - 0.5 * u
    area_eff = {a: spec.area_effect * rng.standard_normal() for a in prefectures}
    area_weight = {a: w for a, w in zip(prefectures, rng.lognormal(0.0, 0.5, len(prefectures)))}
    age_profile = np.exp(-((x / 88.0) ** 7)) + 0.002
    trend = 1.0 + 0.005 * (np.arange(n) - n / 2.0)

    n_out = spec.outlier_areas
    hit = sorted(rng.choice(len(prefectures), size=n_out, replace=False)) if n_out else []
    truth.outlier_areas = [prefectures[i] for i in hit]
    bump = spec.outlier_size * (0.5 + np.exp(-(((x - 40.0) / 25.0) ** 2)))

    mix = math.sqrt(max(1.0 - spec.dependence**2, 0.0))
    bottom_data = {}
    for sid in bottom:
        loads = 1.0 + spec.loading_spread * rng.standard_normal(K)
        own = _simulate_scores(spec, rng, sd, drift=True)
        scores = spec.dependence * common + mix * own
        mean = base + (male_shift if sid.sex == "M" else 0.0) + area_eff[sid.area] * area_shape
        comps = loads[:, None] * basis
        log_rate = mean + scores @ comps
        truth.mean[sid] = mean
        truth.components[sid] = comps
        truth.scores[sid] = scores
        truth.log_rate[sid] = log_rate

        observed = log_rate.copy()
        if sid.area in truth.outlier_areas:
            for y in spec.outlier_years:
                observed[y] += bump
        sex_w = 1.0 if sid.sex == "F" else 0.97
        exposure = (
            spec.exposure_scale * area_weight[sid.area] * sex_w * trend[:, None] * age_profile[None, :]
        )
        if spec.noise_level > 0:
            observed = observed + spec.noise_level * rng.standard_normal(observed.shape)
        rate = np.minimum(np.exp(observed), 0.95)
        if spec.noise_level > 0 and spec.poisson:
            deaths = rng.poisson(rate * exposure).astype(float)
            rate = deaths / exposure
        else:
            deaths = rate * exposure
        bottom_data[sid] = (exposure, deaths)

    groups: dict[SeriesId, list[SeriesId]] = {}
    for sid in bottom:
        area, sex = sid
        for g_area in (area, region_of[area], spec.top):
            for g_sex in {sex, "T"}:
                key = SeriesId(g_area, g_sex)
                if key != sid:
                    groups.setdefault(key, []).append(sid)

    series: dict[SeriesId, SeriesData] = {}
    for sid in ordered_ids(spec.top, regions, prefectures):
        members = groups.get(sid, [sid])
        expo = sum(bottom_data[c][0] for c in members)
        deaths = sum(bottom_data[c][1] for c in members)
        series[sid] = SeriesData(deaths / expo, expo, deaths)
    return MortalityPanel(grid, years, series), truth


def ordered_ids(top: str, regions: Iterable[str], prefectures: Iterable[str]) -> list[SeriesId]:
    """Canonical node order: top, sex, region, region-sex, prefecture, prefecture-sex."""
    regions, prefectures = list(regions), list(prefectures)
    out = [SeriesId(top, "T"), SeriesId(top, "F"), SeriesId(top, "M")]
    out += [SeriesId(r, "T") for r in regions]
    out += [SeriesId(r, "F") for r in regions]
    out += [SeriesId(r, "M") for r in regions]
    out += [SeriesId(a, "T") for a in prefectures]
    out += [SeriesId(a, s) for a in prefectures for s in ("F", "M")]
    return out
