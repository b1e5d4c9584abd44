"""
Traffic ingestion: classic pcap / CSV records -> binned counts -> unit-scaled series.

Pipeline:
    1. Parse raw records (classic pcap via struct, or a tshark-style CSV export)
    2. Bin them into fixed-duration intervals (packets, bytes or TCP SYNs per interval)
    3. Fit a min-max scaler on the training split only
    4. Scale every split into [0, 1], clamping values outside the training range
"""

import io
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

DEFAULT_INTERVAL_SECONDS = 600
METRICS = ("packets", "bytes", "tcp_syn")

SERIES_COLUMNS = ["index", "timestamp", "value"]
RECORD_COLUMNS = ["timestamp", "length", "tcp_syn"]

PCAP_MAGIC = 0xA1B2C3D4
PCAP_MAGIC_SWAPPED = 0xD4C3B2A1
PCAP_GLOBAL_HEADER_LEN = 24
PCAP_RECORD_HEADER_LEN = 16
LINKTYPE_ETHERNET = 1

ETHERTYPE_IPV4 = 0x0800
IPPROTO_TCP = 6
TCP_FLAG_SYN = 0x02
TCP_FLAG_ACK = 0x10


@dataclass(frozen=True)
class PacketRecord:
    """One captured packet, reduced to what the binning needs."""

    ts_sec: int
    ts_frac: int  # microseconds
    captured_len: int
    original_len: int
    is_tcp_syn: bool = False


@dataclass(frozen=True)
class RawSeries:
    """Unscaled per-interval metric values."""

    start_time: int
    interval_seconds: int
    values: np.ndarray
    metric: str = "packets"

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 1 or len(values) == 0:
            raise ValueError("series must have at least one value")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValueError("series values must be finite and non-negative")
        if self.interval_seconds <= 0:
            raise ValueError(f"interval_seconds must be positive, got {self.interval_seconds}")
        if self.metric not in METRICS:
            raise ValueError(f"Unknown metric '{self.metric}'. Expected one of: {', '.join(METRICS)}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.values)

    def timestamps(self) -> np.ndarray:
        return self.start_time + self.interval_seconds * np.arange(len(self.values), dtype=np.int64)


@dataclass(frozen=True)
class Scaler:
    """Min-max scaler fit on the training split."""

    train_min: float
    train_max: float

    def __post_init__(self):
        if not self.train_max > self.train_min:
            raise ValueError(
                f"Scaler requires train_max > train_min, got [{self.train_min}, {self.train_max}]"
            )

    def to_dict(self) -> dict:
        return {"train_min": self.train_min, "train_max": self.train_max}

    @classmethod
    def from_dict(cls, data: dict) -> "Scaler":
        return cls(train_min=float(data["train_min"]), train_max=float(data["train_max"]))


@dataclass(frozen=True)
class TimeSeries:
    """Unit-scaled series: the substrate of training and detection."""

    start_time: int
    interval_seconds: int
    values: np.ndarray
    scaler: Scaler | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 1:
            raise ValueError("series values must be one-dimensional")
        if not np.all(np.isfinite(values)) or np.any(values < 0.0) or np.any(values > 1.0):
            raise ValueError("scaled series values must lie in [0, 1]")
        if self.interval_seconds <= 0:
            raise ValueError(f"interval_seconds must be positive, got {self.interval_seconds}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.values)

    def timestamps(self) -> np.ndarray:
        return self.start_time + self.interval_seconds * np.arange(len(self.values), dtype=np.int64)


# --- pcap -----------------------------------------------------------------


def parse_pcap(file_bytes: bytes) -> list[PacketRecord]:
    """
    Parse a classic (libpcap) capture into packet records.

    Both byte orders are accepted; the byte order is taken from the magic number.
    Only Ethernet captures are supported. Packets whose headers cannot be walked
    down to TCP still count, with is_tcp_syn False.

    Args:
        file_bytes: Whole capture file contents

    Returns:
        One PacketRecord per record block, in file order
    """
    data = bytes(file_bytes)
    if len(data) < PCAP_GLOBAL_HEADER_LEN:
        raise ValueError("unrecognized capture format")

    (magic,) = struct.unpack("<I", data[:4])
    if magic == PCAP_MAGIC:
        endian = "<"
    elif magic == PCAP_MAGIC_SWAPPED:
        endian = ">"
    else:
        raise ValueError("unrecognized capture format")

    _, _, _, _, _, snaplen, network = struct.unpack(endian + "IHHiIII", data[:PCAP_GLOBAL_HEADER_LEN])
    if network != LINKTYPE_ETHERNET:
        raise ValueError("unsupported link type")

    records = []
    offset = PCAP_GLOBAL_HEADER_LEN
    record_header = struct.Struct(endian + "IIII")
    while offset < len(data):
        if offset + PCAP_RECORD_HEADER_LEN > len(data):
            raise ValueError(f"truncated capture at offset {offset}")
        ts_sec, ts_usec, incl_len, orig_len = record_header.unpack_from(data, offset)
        body_start = offset + PCAP_RECORD_HEADER_LEN
        if ts_usec >= 1_000_000:
            raise ValueError(f"invalid sub-second timestamp at offset {offset}")
        if snaplen and incl_len > snaplen:
            raise ValueError(f"record at offset {offset} exceeds snaplen {snaplen}")
        if body_start + incl_len > len(data):
            raise ValueError(f"truncated capture at offset {offset}")

        frame = data[body_start : body_start + incl_len]
        records.append(
            PacketRecord(
                ts_sec=ts_sec,
                ts_frac=ts_usec,
                captured_len=incl_len,
                original_len=orig_len,
                is_tcp_syn=_is_tcp_syn(frame),
            )
        )
        offset = body_start + incl_len

    return records


def _is_tcp_syn(frame: bytes) -> bool:
    """Minimal Ethernet -> IPv4 -> TCP walk. Network byte order throughout."""
    if len(frame) < 14:
        return False
    (ethertype,) = struct.unpack_from("!H", frame, 12)
    if ethertype != ETHERTYPE_IPV4:
        return False

    ip = frame[14:]
    if len(ip) < 20 or ip[0] >> 4 != 4:
        return False
    ihl = (ip[0] & 0x0F) * 4
    if ihl < 20 or ip[9] != IPPROTO_TCP:
        return False

    tcp = ip[ihl:]
    if len(tcp) < 14:
        return False
    flags = tcp[13]
    return bool(flags & TCP_FLAG_SYN) and not flags & TCP_FLAG_ACK


def load_records_csv(text: str) -> list[PacketRecord]:
    """
    Load packet records from a tshark-style field export.

    Expected header: ``timestamp,length,tcp_syn``. Timestamps are decimal
    seconds since epoch, length is bytes on the wire, tcp_syn is 0 or 1.
    """
    df = pd.read_csv(io.StringIO(text), dtype=str)
    if list(df.columns) != RECORD_COLUMNS:
        raise ValueError("bad header")

    records = []
    for ts_text, length, syn in zip(df["timestamp"], df["length"], df["tcp_syn"]):
        ts_sec, _, frac = str(ts_text).strip().partition(".")
        ts_frac = int((frac + "000000")[:6]) if frac else 0
        records.append(
            PacketRecord(
                ts_sec=int(ts_sec),
                ts_frac=ts_frac,
                captured_len=int(length),
                original_len=int(length),
                is_tcp_syn=bool(int(syn)),
            )
        )
    return records


def read_capture(path: str | Path) -> list[PacketRecord]:
    """Read records from a classic pcap or a records CSV, deciding by content."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) >= 4 and struct.unpack("<I", data[:4])[0] in (PCAP_MAGIC, PCAP_MAGIC_SWAPPED):
        return parse_pcap(data)
    return load_records_csv(data.decode("utf-8"))


def is_series_csv(path: str | Path) -> bool:
    """True when the file starts with the series CSV header."""
    with open(path, "rb") as f:
        first_line = f.readline().decode("utf-8", errors="replace").strip()
    return first_line == ",".join(SERIES_COLUMNS)


# --- binning & scaling -----------------------------------------------------


def capture_window(records: list[PacketRecord], interval_seconds: int) -> tuple[int, int]:
    """Default binning window: interval-aligned, covering every record."""
    if not records:
        raise ValueError("cannot derive a window from an empty capture")
    first = min(r.ts_sec for r in records)
    last = max(r.ts_sec for r in records)
    start = (first // interval_seconds) * interval_seconds
    end = (last // interval_seconds + 1) * interval_seconds
    return start, end


def bin_events(
    records: list[PacketRecord],
    start_time: int,
    end_time: int,
    interval_seconds: int = DEFAULT_INTERVAL_SECONDS,
    metric: str = "packets",
) -> RawSeries:
    """
    Sum a per-packet metric into fixed-duration bins over [start_time, end_time).

    Bin k covers [start + k*interval, start + (k+1)*interval). Records outside the
    window are ignored and empty bins are kept as explicit zeros.

    Args:
        records: Parsed packet records
        start_time: Window start, epoch seconds (inclusive)
        end_time: Window end, epoch seconds (exclusive)
        interval_seconds: Bin duration
        metric: One of packets, bytes, tcp_syn

    Returns:
        RawSeries with ceil((end - start) / interval) values
    """
    if interval_seconds <= 0:
        raise ValueError(f"interval_seconds must be positive, got {interval_seconds}")
    if end_time <= start_time:
        raise ValueError(f"end_time must be after start_time, got [{start_time}, {end_time})")
    if metric not in METRICS:
        raise ValueError(f"Unknown metric '{metric}'. Expected one of: {', '.join(METRICS)}")

    n_bins = math.ceil((end_time - start_time) / interval_seconds)
    values = np.zeros(n_bins, dtype=float)

    for record in records:
        # ts_frac < 1s and bin edges are whole seconds, so ts_sec decides the bin
        if record.ts_sec < start_time or record.ts_sec >= end_time:
            continue
        k = (record.ts_sec - start_time) // interval_seconds
        if metric == "packets":
            values[k] += 1
        elif metric == "bytes":
            values[k] += record.original_len
        elif record.is_tcp_syn:
            values[k] += 1

    return RawSeries(start_time=start_time, interval_seconds=interval_seconds, values=values, metric=metric)


def fit_scaler(raw: RawSeries) -> Scaler:
    """Fit min-max bounds on a (training) series."""
    lo = float(np.min(raw.values))
    hi = float(np.max(raw.values))
    if hi == lo:
        raise ValueError("degenerate series: zero range")
    return Scaler(train_min=lo, train_max=hi)


def apply_scaler(scaler: Scaler, raw: RawSeries) -> TimeSeries:
    """Scale into [0, 1]; values outside the training range are clamped."""
    span = scaler.train_max - scaler.train_min
    scaled = np.clip((raw.values - scaler.train_min) / span, 0.0, 1.0)
    return TimeSeries(
        start_time=raw.start_time,
        interval_seconds=raw.interval_seconds,
        values=scaled,
        scaler=scaler,
    )


def slice_series(raw: RawSeries, start: int, stop: int) -> RawSeries:
    """Contiguous sub-series [start, stop) with its start_time shifted accordingly."""
    if not 0 <= start < stop <= len(raw):
        raise ValueError(f"invalid slice [{start}, {stop}) of a {len(raw)}-step series")
    return RawSeries(
        start_time=raw.start_time + start * raw.interval_seconds,
        interval_seconds=raw.interval_seconds,
        values=raw.values[start:stop],
        metric=raw.metric,
    )


# --- series CSV ------------------------------------------------------------


def load_series_csv(
    text: str,
    scaler: Scaler | None = None,
    metric: str = "packets",
    interval_seconds: int | None = None,
) -> TimeSeries | RawSeries:
    """
    Load a series CSV (``index,timestamp,value``).

    Returns a TimeSeries when a scaler is given (the values are then already
    scaled and must lie in [0, 1]), otherwise a RawSeries.
    """
    df = pd.read_csv(io.StringIO(text))
    if list(df.columns) != SERIES_COLUMNS:
        raise ValueError("bad header")
    if len(df) == 0:
        raise ValueError("series CSV has no rows")

    index = df["index"].to_numpy()
    if not np.array_equal(index, np.arange(len(df))):
        raise ValueError("non-contiguous series")

    timestamps = df["timestamp"].to_numpy(dtype=np.int64)
    if interval_seconds is None:
        interval_seconds = int(timestamps[1] - timestamps[0]) if len(df) > 1 else DEFAULT_INTERVAL_SECONDS
    values = df["value"].to_numpy(dtype=float)

    if scaler is not None:
        return TimeSeries(
            start_time=int(timestamps[0]),
            interval_seconds=interval_seconds,
            values=values,
            scaler=scaler,
        )
    return RawSeries(
        start_time=int(timestamps[0]),
        interval_seconds=interval_seconds,
        values=values,
        metric=metric,
    )


def write_series_csv(series: TimeSeries | RawSeries) -> str:
    """Render a series as ``index,timestamp,value`` CSV text (12 significant digits)."""
    df = pd.DataFrame(
        {
            "index": np.arange(len(series.values)),
            "timestamp": series.timestamps(),
            "value": series.values,
        }
    )
    return df.to_csv(index=False, float_format="%.12g", lineterminator="\n")
