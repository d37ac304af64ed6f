"""
Persistence layer: experiment manifests in, CSV artifacts out.
"""
import configparser
import csv
import json
import logging
import math
import os
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd

try:
    from .dual_engine import DualState
    from .errors import ConfigError, TraceFormatError
    from .models import (Catalog, ExperimentConfig, MetricsRecord, PlacementEvent, PolicyName,
                         PopularityProfile, RequestStream, RunManifest)
except ImportError:
    from dual_engine import DualState
    from errors import ConfigError, TraceFormatError
    from models import (Catalog, ExperimentConfig, MetricsRecord, PlacementEvent, PolicyName,
                        PopularityProfile, RequestStream, RunManifest)


logger = logging.getLogger(__name__)

METRICS_HEADER = ('slot', 'cache_id', 'nc', 'rdv', 'bbc', 'hits', 'misses')
EVENTS_HEADER = ('slot', 'cache_id', 'admitted', 'evicted', 'volume')
STREAM_HEADER = ('time', 'cache_id', 'file_id', 'volume')
PROFILE_HEADER = ('file_id', 'tau', 'V', 'omega')
DUAL_HEADER = ('cache_id', 'file_id', 'lambda')
LEARNING_HEADER = ('slot', 'requests', 'rdv_per_request')

# Every manifest key with its default; an empty value means "not set".
DEFAULTS: Dict[str, Dict[str, str]] = {
    'network': {
        'caches': '1',
        'cache_capacity': '1000',
        'root_capacity': '1000',
    },
    'penalty': {
        'cache': 'quadratic a=1',
        'root': 'quadratic a=10',
    },
    'dual': {
        'mu': '',
        'dual_interval': '1',
        'init_mode': 'floor',
        'delta': '1e-9',
    },
    'placement': {
        'policies': 'topx,leastx,leastxth,lru,lfu,rr',
        'cache_sizes': '1',
        'cache_update_intervals': '1',
        'miss_log_capacity': '',
        'virtual_capacity': '',
        'initial_fill': '',
    },
    'workload': {
        'kind': 'zipf',
        'files': '4000',
        'zipf_s': '0.8',
        'size_min': '0.5',
        'size_max': '5',
        'rate': '40',
        'arrivals': 'poisson',
        'mean_requests': '20',
        'omega_min': '0.01',
        'omega_max': '1',
        'profiles': '',
        'trace': '',
        'stream': '',
        'bitrate': '1',
        'slot_length': '1',
        'allow_unsorted': 'no',
        'upscale': '1',
    },
    'run': {
        'topology': 'two',
        'horizon': '100',
        'warmup': '0',
        'seeds': '0',
        'jobs': '1',
        'out': 'results',
        'events': 'no',
        'learning_curve': 'no',
        'dual_snapshot': 'no',
    },
}

_TRUE = {'1', 'yes', 'true', 'on'}
_FALSE = {'0', 'no', 'false', 'off'}


def _format(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.12g}"
    return str(value)


def _split(text: str) -> List[str]:
    return [item.strip() for item in text.split(',') if item.strip()]


def get_str(settings: Dict[str, Dict[str, str]], section: str, key: str) -> str:
    return settings[section][key].strip()


def get_float(settings, section: str, key: str) -> float:
    value = get_str(settings, section, key)
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"[{section}] {key} must be a number, got {value!r}") from None


def get_int(settings, section: str, key: str) -> int:
    value = get_str(settings, section, key)
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"[{section}] {key} must be an integer, got {value!r}") from None


def get_optional_float(settings, section: str, key: str) -> Optional[float]:
    return get_float(settings, section, key) if get_str(settings, section, key) else None


def get_optional_int(settings, section: str, key: str) -> Optional[int]:
    return get_int(settings, section, key) if get_str(settings, section, key) else None


def get_bool(settings, section: str, key: str) -> bool:
    value = get_str(settings, section, key).lower()
    if value in _TRUE:
        return True
    if value in _FALSE:
        return False
    raise ConfigError(f"[{section}] {key} must be yes or no, got {value!r}")


def load_manifest(path: str, output_dir: Optional[str] = None,
                  seeds: Optional[Sequence[int]] = None) -> RunManifest:
    """Read an INI experiment manifest, filling in defaults.

    Unknown sections and keys are rejected; ``output_dir`` and ``seeds``
    override the manifest.
    """
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            parser.read_file(f)
    except OSError as e:
        raise ConfigError(f"cannot read manifest {path}: {e}") from None
    except configparser.Error as e:
        raise ConfigError(f"malformed manifest {path}: {e}") from None

    settings = {section: dict(values) for section, values in DEFAULTS.items()}
    for section in parser.sections():
        if section not in DEFAULTS:
            raise ConfigError(f"unknown section [{section}] in {path}")
        for key, value in parser.items(section):
            if key not in DEFAULTS[section]:
                raise ConfigError(f"unknown key '{key}' in section [{section}] of {path}")
            settings[section][key] = value

    try:
        policies = [PolicyName(name.lower()) for name in _split(settings['placement']['policies'])]
    except ValueError as e:
        raise ConfigError(f"[placement] policies: {e}") from None
    try:
        cache_sizes = [float(v) for v in _split(settings['placement']['cache_sizes'])]
        intervals = [int(v) for v in _split(settings['placement']['cache_update_intervals'])]
        manifest_seeds = [int(v) for v in _split(settings['run']['seeds'])]
    except ValueError as e:
        raise ConfigError(f"bad sweep list in {path}: {e}") from None
    if any(not (0 < size <= 100) for size in cache_sizes):
        raise ConfigError("[placement] cache_sizes are percentages in (0, 100]")
    if seeds is not None:
        manifest_seeds = list(seeds)
    if output_dir is None:
        output_dir = settings['run']['out']
    return RunManifest(str(path), str(output_dir), policies, cache_sizes, intervals, manifest_seeds, settings)


class DataManager:
    """Writes run artifacts into one output directory."""

    def __init__(self, out_dir: str):
        self.out_dir = Path(out_dir)

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def _write_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence]) -> bool:
        target = self.path(name)
        try:
            os.makedirs(target.parent, exist_ok=True)
            with open(target, 'w', newline='', encoding='utf-8') as f:
                writer = csv.writer(f, lineterminator='\n')
                writer.writerow(header)
                for row in rows:
                    writer.writerow([_format(v) for v in row])
            return True
        except Exception as e:
            logger.error("Error writing %s: %s", target, e)
            return False

    def save_metrics(self, metrics: Sequence[MetricsRecord], name: str = 'metrics.csv') -> bool:
        """Per-slot, per-cache metrics."""
        return self._write_csv(name, METRICS_HEADER,
                               ([r.to_dict()[k] for k in METRICS_HEADER] for r in metrics))

    def save_events(self, events: Sequence[PlacementEvent], name: str = 'events.csv') -> bool:
        """Placement events; admitted and evicted ids are ';'-separated."""
        return self._write_csv(name, EVENTS_HEADER,
                               ([e.to_dict()[k] for k in EVENTS_HEADER] for e in events))

    def save_summary(self, rows: Sequence[Dict], name: str = 'summary.csv') -> bool:
        """Summary rows as a table; columns follow the first row's keys."""
        if not rows:
            return self._write_csv(name, ('policy',), ())
        header = list(rows[0])
        return self._write_csv(name, header, ([row.get(k, '') for k in header] for row in rows))

    def save_table(self, frame: pd.DataFrame, name: str) -> bool:
        """A DataFrame with its index written as leading columns."""
        target = self.path(name)
        try:
            os.makedirs(target.parent, exist_ok=True)
            frame.reset_index().to_csv(target, index=False, float_format='%.12g')
            return True
        except Exception as e:
            logger.error("Error writing %s: %s", target, e)
            return False

    def save_profiles(self, profiles: Sequence[PopularityProfile], name: str = 'profiles.csv') -> bool:
        return self._write_csv(name, PROFILE_HEADER,
                               ((p.file_id, p.tau, p.V, p.omega) for p in profiles))

    def save_stream(self, stream: RequestStream, name: str = 'stream.csv') -> bool:
        return self._write_csv(name, STREAM_HEADER, (tuple(e) for e in stream))

    def save_dual_snapshot(self, state: DualState, name: str = 'dual.csv') -> bool:
        """Shadow prices as cache_id,file_id,lambda rows."""
        return self._write_csv(name, DUAL_HEADER, state.rows())

    def save_learning_curve(self, curve: pd.DataFrame, name: str = 'learning.csv') -> bool:
        return self._write_csv(name, LEARNING_HEADER,
                               ((slot, int(row.requests), row.rdv_per_request) for slot, row in curve.iterrows()))

    def save_run_info(self, config: ExperimentConfig, catalog: Catalog, name: str = 'run.json') -> bool:
        """Record the configuration of a cell next to its metrics."""
        network = config.network
        info = {
            'topology': config.topology.value,
            'policy': config.policy.value,
            'horizon': config.horizon,
            'warmup': config.warmup,
            'seed': config.seed,
            'mu': config.mu,
            'dual_interval': config.dual_interval,
            'cache_update_interval': config.cache_update_interval,
            'storage': network.storage.tolist(),
            'cache_capacity': network.cache_capacity.tolist(),
            'root_capacity': network.root_capacity.tolist(),
            'cache_penalties': [spec.to_dict() for spec in network.cache_penalties],
            'root_penalties': [spec.to_dict() for spec in network.root_penalties],
            'files': catalog.files,
            'total_volume': catalog.total_volume,
        }
        target = self.path(name)
        try:
            os.makedirs(target.parent, exist_ok=True)
            with open(target, 'w', encoding='utf-8') as f:
                json.dump(info, f, indent=2, ensure_ascii=False, default=str)
            return True
        except Exception as e:
            logger.error("Error writing %s: %s", target, e)
            return False


def _read_rows(path: str, header: Sequence[str]):
    """Yield (line number, row) of a CSV with the given header."""
    try:
        f = open(path, newline='', encoding='utf-8')
    except OSError as e:
        raise TraceFormatError(f"cannot read {path}: {e}") from None
    with f:
        reader = csv.reader(f)
        first = next(reader, None)
        if first is None:
            raise TraceFormatError(f"{path} is empty", 1)
        if tuple(col.strip() for col in first) != tuple(header):
            raise TraceFormatError(f"expected header {','.join(header)}, got {','.join(first)}", 1)
        for row in reader:
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise TraceFormatError(f"expected {len(header)} fields, got {len(row)}", reader.line_num)
            yield reader.line_num, row


def load_profiles(path: str) -> List[PopularityProfile]:
    """Read a file_id,tau,V,omega profile CSV."""
    profiles = []
    for line, row in _read_rows(path, PROFILE_HEADER):
        try:
            profiles.append(PopularityProfile.from_dict(dict(zip(PROFILE_HEADER, row))))
        except (ValueError, ConfigError) as e:
            raise TraceFormatError(str(e), line) from None
    if not profiles:
        raise TraceFormatError(f"{path} has no profiles", 2)
    return profiles


def load_stream(path: str) -> RequestStream:
    """Read a time,cache_id,file_id,volume stream CSV; rows must be time-sorted."""
    columns = ([], [], [], [])
    previous = -math.inf
    for line, row in _read_rows(path, STREAM_HEADER):
        try:
            time, cache, file, volume = float(row[0]), int(row[1]), int(row[2]), float(row[3])
        except ValueError as e:
            raise TraceFormatError(str(e), line) from None
        if time < previous:
            raise TraceFormatError(f"time {time:g} is earlier than the previous row", line)
        if cache < 0 or file < 0 or not volume > 0:
            raise TraceFormatError("ids must be non-negative and volume positive", line)
        previous = time
        for column, value in zip(columns, (time, cache, file, volume)):
            column.append(value)
    if not columns[0]:
        raise TraceFormatError(f"{path} has no events", 2)
    return RequestStream(*(np.asarray(c) for c in columns))
