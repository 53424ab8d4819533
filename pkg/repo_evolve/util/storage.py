import hashlib
import json
import logging
from collections import defaultdict
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Tuple

import numpy as np
import pandas as pd

from repo_evolve.errors import DataError, MissingArtifactError
from repo_evolve.ingestion import build_chain
from repo_evolve.models.events import EventChain, EventType
from repo_evolve.models.profiles import RawEventRecord

logger = logging.getLogger(__name__)

BUNDLE_VERSION = 1
CHAIN_COLUMNS = ("repo_id", "event_type", "actor", "timestamp")
EVENT_COLUMNS = ("repo_id", "event_type", "group", "timestamp", "delay_hours", "type_score", "group_score")


def canonical_json(obj: Any, indent: Optional[int] = None) -> str:
    return json.dumps(obj, sort_keys=True, indent=indent, separators=None if indent else (",", ":"), allow_nan=False)


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as file:
        for block in iter(lambda: file.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def require(path: Path, stage: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(path, stage)
    return path


def write_json(path: Path, obj: Any):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(canonical_json(obj, indent=2) + "\n", encoding="utf-8")


def read_json(path: Path, stage: str) -> Any:
    return json.loads(require(path, stage).read_text(encoding="utf-8"))


def write_bundle(path: Path, tensors: Mapping[str, np.ndarray], meta: Mapping[str, Any]):
    """
    One canonical JSON header line, then each array's raw little-endian
    bytes in header order. Equal content gives equal bytes.
    """
    entries = []
    blobs = []
    offset = 0
    for name in sorted(tensors):
        array = np.asarray(tensors[name])
        array = np.asarray(array, dtype=array.dtype.newbyteorder("<"), order="C")
        blob = array.tobytes()
        entries.append({"name": name, "dtype": array.dtype.str, "shape": list(array.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    header = canonical_json({"version": BUNDLE_VERSION, "meta": dict(meta), "tensors": entries})
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as file:
        file.write(header.encode("utf-8") + b"\n")
        for blob in blobs:
            file.write(blob)


def read_bundle(path: Path, stage: str) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    path = require(path, stage)
    raw = path.read_bytes()
    newline = raw.find(b"\n")
    try:
        header = json.loads(raw[:newline].decode("utf-8"))
    except (ValueError, UnicodeDecodeError):
        raise DataError(f"{path} is not a tensor bundle") from None
    if header.get("version") != BUNDLE_VERSION:
        raise DataError(f"{path}: unsupported bundle version {header.get('version')!r}")
    body = memoryview(raw)[newline + 1 :]
    tensors = {}
    for entry in header["tensors"]:
        dtype = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        end = start + count * dtype.itemsize
        if end > len(body):
            raise DataError(f"{path}: tensor {entry['name']} is truncated")
        tensors[entry["name"]] = np.frombuffer(body[start:end], dtype=dtype).reshape(entry["shape"]).copy()
    return tensors, header["meta"]


def write_chains(path: Path, chains: Iterable[EventChain]):
    """Raw chains, SOC rows included, one event per line."""
    rows = []
    for chain in chains:
        for event, actor in zip(chain.events, chain.actors):
            rows.append((chain.repo_id, event.event_type.label, actor or "", event.timestamp))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows, columns=list(CHAIN_COLUMNS)).to_csv(path, sep="\t", index=False, lineterminator="\n")


def read_chains(path: Path, stage: str = "ingest") -> Dict[str, EventChain]:
    frame = pd.read_csv(require(path, stage), sep="\t", dtype=str, keep_default_na=False, quoting=3)
    records: Dict[str, List[RawEventRecord]] = defaultdict(list)
    for row in frame.itertuples(index=False):
        if row.event_type == EventType.SOC.label:
            records.setdefault(row.repo_id, [])
            continue
        records[row.repo_id].append(RawEventRecord(row.repo_id, row.actor, row.event_type, int(row.timestamp)))
    chains = {repo_id: build_chain(repo_id, recs) for repo_id, recs in records.items() if recs}
    logger.info("Read %d chains from %s", len(chains), path)
    return chains


def write_event_table(path: Path, rows: Iterable[Tuple]):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(list(rows), columns=list(EVENT_COLUMNS))
    frame.to_csv(path, sep="\t", index=False, lineterminator="\n", float_format="%.10g")


def read_event_table(path: Path, stage: str) -> pd.DataFrame:
    frame = pd.read_csv(require(path, stage), sep="\t", keep_default_na=False, dtype={"repo_id": str, "event_type": str})
    missing = [c for c in EVENT_COLUMNS if c not in frame.columns]
    if missing:
        raise DataError(f"{path} is missing columns {missing}")
    return frame
