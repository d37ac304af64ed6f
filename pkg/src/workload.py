"""
Demand streams for the simulator.

Static Zipf popularity, per-file exponential popularity decay, ingestion of
IPTV-style request logs, decay-rate fitting and upscaling by resampling.
Every generator is a pure function of its arguments and seed.
"""
import csv
import logging
import math
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import expon

try:
    from .errors import ParameterError, TraceFormatError
    from .models import Catalog, PopularityProfile, RequestStream
except ImportError:
    from errors import ParameterError, TraceFormatError
    from models import Catalog, PopularityProfile, RequestStream


logger = logging.getLogger(__name__)

TRACE_HEADER = ("timestamp", "cache_id", "file_id", "duration_minutes")
TRACE_FORMATS = ("csv",)

# Share of the horizon over which synthetic files are released.
RELEASE_WINDOW = 0.8

Seed = Union[int, np.random.SeedSequence]


class WorkloadSeeds(NamedTuple):
    """Independent child seeds for the parts of one generated workload."""
    catalog: np.random.SeedSequence
    profiles: np.random.SeedSequence
    stream: np.random.SeedSequence


def workload_seeds(seed: int) -> WorkloadSeeds:
    """One child seed per generator of a workload."""
    return WorkloadSeeds(*np.random.SeedSequence(seed).spawn(3))


def zipf_popularity(files: int, s: float) -> np.ndarray:
    """p_k proportional to k^-s over ranks 1..files."""
    if files < 1:
        raise ParameterError(f"need at least one file, got {files}")
    if s < 0:
        raise ParameterError(f"zipf skew must be non-negative, got {s}")
    weights = np.arange(1, files + 1, dtype=float) ** -s
    return weights / weights.sum()


def zipf_catalog(files: int, s: float, size_range: Tuple[float, float] = (0.5, 5.0),
                 seed: Seed = 0) -> Tuple[Catalog, np.ndarray]:
    """Catalog with uniform random sizes and Zipf popularity by file id."""
    lo, hi = size_range
    if not 0 < lo <= hi:
        raise ParameterError(f"size range must satisfy 0 < low <= high, got {size_range}")
    p = zipf_popularity(files, s)
    rng = np.random.default_rng(seed)
    sizes = rng.uniform(lo, hi, size=files)
    return Catalog(sizes), p


def _assign_caches(rng: np.random.Generator, n: int, caches: int) -> np.ndarray:
    if caches < 1:
        raise ParameterError(f"need at least one cache, got {caches}")
    if caches == 1:
        return np.zeros(n, dtype=np.int64)
    return rng.integers(caches, size=n)


def static_stream(catalog: Catalog, p: np.ndarray, rate: float, horizon: int, seed: Seed = 0,
                  caches: int = 1, arrivals: str = "poisson") -> RequestStream:
    """Per slot, a Poisson (or fixed) number of i.i.d. p-distributed requests.

    Request times are spread uniformly inside their slot; each request asks
    for the whole file.
    """
    if not rate > 0:
        raise ParameterError(f"request rate must be positive, got {rate}")
    if horizon < 1:
        raise ParameterError(f"horizon must be at least one slot, got {horizon}")
    p = np.asarray(p, dtype=float)
    if p.size != catalog.files:
        raise ParameterError(f"popularity has {p.size} entries for {catalog.files} files")
    rng = np.random.default_rng(seed)
    if arrivals == "poisson":
        counts = rng.poisson(rate, size=horizon)
    elif arrivals == "fixed":
        counts = np.full(horizon, int(round(rate)))
    else:
        raise ParameterError(f"unknown arrival model {arrivals!r}; use 'poisson' or 'fixed'")
    total = int(counts.sum())
    time = np.repeat(np.arange(horizon, dtype=float), counts) + rng.random(total)
    files = rng.choice(catalog.files, size=total, p=p)
    cache = _assign_caches(rng, total, caches)
    return RequestStream.merge(time, cache, files, catalog.sizes[files])


def decay_profiles(files: int, horizon: float, mean_requests: float = 20.0,
                   omega_range: Tuple[float, float] = (0.01, 1.0), seed: Seed = 0,
                   pareto_shape: float = 2.0) -> List[PopularityProfile]:
    """Synthetic catalog whose files are released over time and then fade.

    tau is uniform over the first part of the horizon, V is one plus a
    Pareto draw scaled to the requested mean and omega is log-uniform.
    """
    if files < 1:
        raise ParameterError(f"need at least one file, got {files}")
    if mean_requests < 1:
        raise ParameterError(f"mean request count must be >= 1, got {mean_requests}")
    lo, hi = omega_range
    if not 0 < lo <= hi:
        raise ParameterError(f"omega range must satisfy 0 < low <= high, got {omega_range}")
    if not pareto_shape > 1:
        raise ParameterError(f"pareto shape must exceed 1 for a finite mean, got {pareto_shape}")
    rng = np.random.default_rng(seed)
    tau = rng.uniform(0.0, RELEASE_WINDOW * horizon, size=files)
    # numpy's pareto has mean 1/(shape - 1).
    scale = (mean_requests - 1.0) * (pareto_shape - 1.0)
    V = 1 + np.floor(scale * rng.pareto(pareto_shape, size=files)).astype(np.int64)
    omega = np.exp(rng.uniform(math.log(lo), math.log(hi), size=files))
    return [PopularityProfile(f, float(tau[f]), int(V[f]), float(omega[f])) for f in range(files)]


def decay_stream(profiles: Sequence[PopularityProfile], catalog: Catalog, horizon: Optional[float] = None,
                 seed: Seed = 0, caches: int = 1) -> RequestStream:
    """Each file emits V request times tau + E, E exponential with rate omega.

    Requests at or after ``horizon`` are dropped when a horizon is given.
    """
    rng = np.random.default_rng(seed)
    parts = []
    for profile in profiles:
        if profile.file_id < 0 or profile.file_id >= catalog.files:
            raise ParameterError(f"profile for file {profile.file_id} outside the catalog")
        offsets = rng.exponential(1.0 / profile.omega, size=profile.V)
        parts.append((profile.tau + offsets, np.full(profile.V, profile.file_id, dtype=np.int64)))
    if not parts:
        return RequestStream.empty()
    time = np.concatenate([t for t, _ in parts])
    files = np.concatenate([f for _, f in parts])
    if horizon is not None:
        keep = time < horizon
        time, files = time[keep], files[keep]
    cache = _assign_caches(rng, time.size, caches)
    return RequestStream.merge(time, cache, files, catalog.sizes[files])


class DecayFit(NamedTuple):
    """Fitted first-request time, request count and decay rate of one file."""
    tau: float
    V: int
    omega: float


def fit_decay(times: Sequence[float], default_omega: Optional[float] = None) -> DecayFit:
    """Exponential-rate MLE of a file's popularity decay.

    The first request is the anchor; the remaining requests are offsets
    from it. One request, or offsets that are all zero, leave the rate
    undefined and ``default_omega`` (NaN when not given) is used.
    """
    times = np.sort(np.asarray(times, dtype=float))
    if times.size == 0:
        raise ParameterError("fitting a decay rate needs at least one request")
    tau = float(times[0])
    fallback = float('nan') if default_omega is None else float(default_omega)
    offsets = times[1:] - tau
    if offsets.size == 0 or not np.any(offsets > 0):
        return DecayFit(tau, int(times.size), fallback)
    _, scale = expon.fit(offsets, floc=0)
    return DecayFit(tau, int(times.size), 1.0 / scale)


def fit_profiles(stream: RequestStream, default_omega: Optional[float] = None) -> List[PopularityProfile]:
    """One profile per requested file; undefined rates get the median fitted rate."""
    if len(stream) == 0:
        raise ParameterError("cannot fit profiles to an empty stream")
    fits: Dict[int, DecayFit] = {}
    order = np.argsort(stream.file, kind='stable')
    files, starts = np.unique(stream.file[order], return_index=True)
    for f, chunk in zip(files.tolist(), np.split(stream.time[order], starts[1:])):
        fits[f] = fit_decay(chunk)
    if default_omega is None:
        rates = [fit.omega for fit in fits.values() if math.isfinite(fit.omega)]
        if rates:
            default_omega = float(np.median(rates))
        else:
            logger.warning("no file has enough requests to fit a decay rate; using omega=1")
            default_omega = 1.0
    undefined = sum(1 for fit in fits.values() if not math.isfinite(fit.omega))
    if undefined:
        logger.info("%d of %d files use the default decay rate %.6g", undefined, len(fits), default_omega)
    return [PopularityProfile(f, fit.tau, fit.V, fit.omega if math.isfinite(fit.omega) else default_omega)
            for f, fit in sorted(fits.items())]


def upscale(profiles: Sequence[PopularityProfile], k: int) -> List[PopularityProfile]:
    """Multiply every request count by k; decay_stream then resamples."""
    if int(k) != k or k < 1:
        raise ParameterError(f"upscale factor must be an integer >= 1, got {k}")
    k = int(k)
    return [PopularityProfile(p.file_id, p.tau, p.V * k, p.omega) for p in profiles]


def catalog_from_stream(stream: RequestStream) -> Catalog:
    """Rebuild file sizes from the largest per-event volume of each file.

    Ids never requested get the median size of the requested ones.
    """
    if len(stream) == 0:
        raise ParameterError("cannot rebuild a catalog from an empty stream")
    files = int(stream.file.max()) + 1
    sizes = np.zeros(files)
    np.maximum.at(sizes, stream.file, stream.volume)
    seen = np.zeros(files, dtype=bool)
    seen[stream.file] = True
    if not np.all(seen):
        sizes[~seen] = float(np.median(sizes[seen]))
    return Catalog(sizes)


def _number(value: str, column: str, line: int) -> float:
    try:
        number = float(value)
    except (TypeError, ValueError):
        raise TraceFormatError(f"{column} {value!r} is not a number", line) from None
    if not math.isfinite(number):
        raise TraceFormatError(f"{column} must be finite, got {value!r}", line)
    return number


def ingest_trace(path: str, fmt: str = "csv", bitrate: float = 1.0, allow_unsorted: bool = False,
                 slot_length: float = 1.0) -> Tuple[Catalog, RequestStream]:
    """Read a request log into a catalog and a time-sorted stream.

    The CSV header is ``timestamp,cache_id,file_id,duration_minutes``. File
    ids may be any strings; they are numbered in order of first appearance
    and kept as catalog names. A file's size is its duration times the
    bit rate. Timestamps are divided by ``slot_length`` to give slot times.
    """
    if fmt not in TRACE_FORMATS:
        raise TraceFormatError(f"unknown trace format {fmt!r}; supported: {', '.join(TRACE_FORMATS)}")
    if not bitrate > 0 or not slot_length > 0:
        raise ParameterError("bit rate and slot length must be positive")

    ids: Dict[str, int] = {}
    durations: List[float] = []
    time, cache, file = [], [], []
    with open(path, newline='', encoding='utf-8') as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            raise TraceFormatError("trace is empty", 1)
        if tuple(col.strip() for col in header) != TRACE_HEADER:
            raise TraceFormatError(f"expected header {','.join(TRACE_HEADER)}, got {','.join(header)}", 1)
        previous = -math.inf
        for row in reader:
            line = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(TRACE_HEADER):
                raise TraceFormatError(f"expected {len(TRACE_HEADER)} fields, got {len(row)}", line)
            stamp = _number(row[0], "timestamp", line)
            if stamp < previous and not allow_unsorted:
                raise TraceFormatError(f"timestamp {stamp:g} is earlier than the previous row", line)
            previous = max(previous, stamp)
            cache_value = _number(row[1], "cache_id", line)
            if cache_value < 0 or cache_value != int(cache_value):
                raise TraceFormatError(f"cache_id must be a non-negative integer, got {row[1]!r}", line)
            name = row[2].strip()
            if not name:
                raise TraceFormatError("file_id is empty", line)
            duration = _number(row[3], "duration_minutes", line)
            if duration <= 0:
                raise TraceFormatError(f"duration_minutes must be positive, got {duration:g}", line)
            if name not in ids:
                ids[name] = len(ids)
                durations.append(duration)
            elif durations[ids[name]] != duration:
                logger.debug("file %s listed with durations %g and %g; keeping the larger",
                             name, durations[ids[name]], duration)
                durations[ids[name]] = max(durations[ids[name]], duration)
            time.append(stamp / slot_length)
            cache.append(int(cache_value))
            file.append(ids[name])
    if not time:
        raise TraceFormatError("trace has a header but no requests", 2)

    sizes = np.asarray(durations) * bitrate
    catalog = Catalog(sizes, tuple(ids))
    files = np.asarray(file, dtype=np.int64)
    stream = RequestStream.merge(np.asarray(time), np.asarray(cache), files, sizes[files])
    logger.info("ingested %d requests for %d files from %s", len(stream), catalog.files, path)
    return catalog, stream
