"""Throughput, real-time factor, and user-perceived latency measurement.

RTF is processing time over audio duration (real-time means <= 1); throughput
is audio seconds consumed per wall-clock second across all streams;
user-perceived latency is the mean delay between a word's end timestamp in
the reference alignment and the moment it is shown to the user.

Latency runs release chunks on a simulated real-time clock: chunk j of a
stream becomes available at (j+1)*chunk_ms, processing starts once both the
chunk and the processor are free, and words surface when their chunk finishes.
Per-chunk costs come either from a fixed cost model (machine-independent,
used with the scripted processor) or from measuring the real pipeline.
Latency requires the emitted words to match the reference words exactly
(a WER=0 corpus); anything else refuses the measurement.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np

from .engine import Engine
from .errors import InputError

CSV_COLUMNS = [
    "axis",
    "value",
    "streams",
    "chunk_ms",
    "throughput_audio_s_per_s",
    "rtf",
    "mean_latency_ms",
    "decode_fraction",
]


# ---------------------------------------------------------------------------
# metric definitions
# ---------------------------------------------------------------------------


def compute_rtf(processing_time_s: float, audio_duration_s: float) -> float:
    """Time taken to process the input over the input duration."""
    if processing_time_s <= 0 or audio_duration_s <= 0:
        raise InputError("durations must be > 0")
    return processing_time_s / audio_duration_s


def compute_throughput(total_audio_s: float, wall_clock_s: float) -> float:
    """Audio seconds processed per wall clock second."""
    if total_audio_s <= 0 or wall_clock_s <= 0:
        raise InputError("durations must be > 0")
    return total_audio_s / wall_clock_s


@dataclass(frozen=True)
class WordAlignment:
    word: str
    start_ms: float
    end_ms: float


@dataclass(frozen=True)
class EmittedWord:
    word: str
    available_ms: float  # when it was shown, relative to stream start


@dataclass
class LatencyReport:
    mean_latency_ms: float
    per_word_ms: list[float]
    stream_count: int = 1
    chunk_ms: int | None = None


@dataclass
class ThroughputReport:
    throughput: float
    rtf: float
    total_audio_s: float
    wall_clock_s: float
    stream_count: int
    chunk_ms: int
    decode_fraction: float = 0.0


def load_alignments(path) -> list[WordAlignment]:
    """CTM-like reference: one ``word start_ms end_ms`` per line."""
    out: list[WordAlignment] = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise InputError(f"{path}:{ln}: expected 'word start_ms end_ms'")
            out.append(WordAlignment(parts[0], float(parts[1]), float(parts[2])))
    _validate_alignments(out, str(path))
    return out


def save_alignments(path, alignments: list[WordAlignment]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for a in alignments:
            fh.write(f"{a.word} {a.start_ms:.1f} {a.end_ms:.1f}\n")


def _validate_alignments(alignments, origin="alignments"):
    prev_end = 0.0
    for a in alignments:
        if not 0 <= a.start_ms < a.end_ms:
            raise InputError(f"{origin}: bad interval for {a.word!r}")
        if a.start_ms < prev_end:
            raise InputError(f"{origin}: overlapping interval at {a.word!r}")
        prev_end = a.end_ms


def user_perceived_latency(
    alignments: list[WordAlignment], emitted: list[EmittedWord]
) -> LatencyReport:
    """Mean over words of (availability - reference end time).

    Refuses to measure unless the emitted word sequence equals the reference
    word sequence exactly.
    """
    _validate_alignments(alignments)
    ref = [a.word for a in alignments]
    hyp = [e.word for e in emitted]
    if ref != hyp:
        raise InputError(
            f"word sequence mismatch (reference {ref!r} vs emitted {hyp!r}); "
            "latency needs a WER=0 run"
        )
    per_word = [e.available_ms - a.end_ms for a, e in zip(alignments, emitted)]
    mean = sum(per_word) / len(per_word) if per_word else 0.0
    return LatencyReport(mean, per_word)


# ---------------------------------------------------------------------------
# timed (simulated real-time) streaming
# ---------------------------------------------------------------------------


class ScriptedStreamProcessor:
    """Deterministic fake pipeline: fixed per-chunk cost and scripted words.

    ``script[j]`` lists the words first displayed after chunk j; words never
    get corrected. Used for machine-independent latency tests.
    """

    def __init__(self, script: list[list[str]], cost_ms: float):
        self.script = script
        self.cost_ms = cost_ms
        self._shown: list[str] = []
        self._next = 0

    def process_chunk(self) -> tuple[list[str], float]:
        words = self.script[self._next] if self._next < len(self.script) else []
        self._next += 1
        self._shown = self._shown + list(words)
        return list(self._shown), self.cost_ms

    def close(self) -> tuple[list[str], float]:
        for words in self.script[self._next :]:
            self._shown = self._shown + list(words)
        return list(self._shown), 0.0


class EngineStreamProcessor:
    """Real pipeline driver; per-chunk cost is the measured compute time,
    or a fixed cost model when ``cost_ms`` is given."""

    def __init__(self, engine: Engine, samples: np.ndarray, chunk_ms: int,
                 cost_ms: float | None = None):
        self.engine = engine
        self.chunk_ms = chunk_ms
        self.cost_ms = cost_ms
        self.stream_id = engine.create_stream()
        step = engine.config.sample_rate * chunk_ms // 1000
        self.chunks = [samples[off : off + step] for off in range(0, len(samples), step)]
        self._next = 0

    @property
    def n_chunks(self) -> int:
        return len(self.chunks)

    def process_chunk(self) -> tuple[list[str], float]:
        chunk = self.chunks[self._next] if self._next < len(self.chunks) else np.zeros(0)
        self._next += 1
        t0 = time.perf_counter()
        self.engine.push_audio(self.stream_id, chunk)
        cost = (time.perf_counter() - t0) * 1000.0
        session = self.engine._session(self.stream_id)
        return session.displayed_words(), self.cost_ms if self.cost_ms is not None else cost

    def close(self) -> tuple[list[str], float]:
        t0 = time.perf_counter()
        transcript = self.engine.close_stream(self.stream_id)
        cost = (time.perf_counter() - t0) * 1000.0
        words = [w.word for w in transcript.words]
        return words, self.cost_ms if self.cost_ms is not None else cost


@dataclass
class TimedStreamLog:
    """Displayed-word snapshots with their virtual availability times."""

    snapshots: list[tuple[float, list[str]]]
    final_words: list[str]

    def emitted_words(self) -> list[EmittedWord]:
        """Availability of each final word: the earliest time from which it is
        displayed at its final position and never changes afterwards."""
        out: list[EmittedWord] = []
        for i, word in enumerate(self.final_words):
            available = self.snapshots[-1][0]
            for t, shown in reversed(self.snapshots):
                if i < len(shown) and shown[i] == word:
                    available = t
                else:
                    break
            out.append(EmittedWord(word, available))
        return out


def run_timed_stream(processor, n_chunks: int, chunk_ms: float) -> TimedStreamLog:
    """Drive one stream on the virtual clock.

    Chunk j is available at (j+1)*chunk_ms; processing respects arrival order
    and back-pressure: end_j = max((j+1)*chunk_ms, end_{j-1}) + cost_j.
    """
    snapshots: list[tuple[float, list[str]]] = []
    end_prev = 0.0
    for j in range(n_chunks):
        arrival = (j + 1) * chunk_ms
        shown, cost_ms = processor.process_chunk()
        end_prev = max(arrival, end_prev) + cost_ms
        snapshots.append((end_prev, shown))
    final_words, close_cost = processor.close()
    end_prev += close_cost
    snapshots.append((end_prev, final_words))
    return TimedStreamLog(snapshots, final_words)


def measure_latency(
    engine: Engine,
    samples: np.ndarray,
    alignments: list[WordAlignment],
    chunk_ms: int,
    cost_ms: float | None = None,
) -> LatencyReport:
    proc = EngineStreamProcessor(engine, samples, chunk_ms, cost_ms)
    log = run_timed_stream(proc, proc.n_chunks, chunk_ms)
    report = user_perceived_latency(alignments, log.emitted_words())
    report.chunk_ms = chunk_ms
    return report


# ---------------------------------------------------------------------------
# throughput / RTF runs and sweeps
# ---------------------------------------------------------------------------


def measure_throughput(
    engine: Engine, sources: list[np.ndarray], workers: int, chunk_ms: int
) -> ThroughputReport:
    """Saturated run: all streams' chunks are fed as fast as the pool allows."""
    mark = len(engine.timing_log)
    wall0 = time.perf_counter()
    engine.run_concurrent(sources, workers=workers, chunk_ms=chunk_ms)
    wall = time.perf_counter() - wall0
    timings = engine.timing_log[mark:]
    total_audio = sum(len(s) for s in sources) / engine.config.sample_rate
    processing = sum(t.end_s - t.start_s for t in timings)
    busy = sum(t.frontend_s + t.model_s + t.decode_s for t in timings)
    decode = sum(t.decode_s for t in timings)
    return ThroughputReport(
        throughput=compute_throughput(total_audio, wall),
        rtf=compute_rtf(processing, total_audio),
        total_audio_s=total_audio,
        wall_clock_s=wall,
        stream_count=len(sources),
        chunk_ms=chunk_ms,
        decode_fraction=decode / busy if busy > 0 else 0.0,
    )


@dataclass
class SweepWorkload:
    """Audio plus a WER=0 reference for the latency leg of a sweep."""

    samples: np.ndarray
    alignments: list[WordAlignment]

    @classmethod
    def self_referenced(cls, engine: Engine, samples: np.ndarray) -> "SweepWorkload":
        """Build reference alignments from an offline pass over the same audio.

        The decoder is deterministic and chunking-invariant, so its own
        offline transcript is a WER=0 reference with word end times taken
        from emission frames.
        """
        transcript = engine.transcribe(samples, chunk_ms=10_000_000)
        stride = engine.model.output_stride_ms
        alignments = []
        prev_end = 0.0
        for w in transcript.words:
            end = max((w.end_frame + 1) * stride, prev_end + 1.0)
            alignments.append(WordAlignment(w.word, prev_end, end))
            prev_end = end
        return cls(samples, alignments)


def sweep(
    engine: Engine,
    axis: str,
    values: list[int],
    workload: SweepWorkload,
    workers: int = 1,
    base_streams: int = 2,
    base_chunk_ms: int | None = None,
) -> list[dict]:
    """One row per swept value: throughput, RTF, and mean latency.

    axis="streams" varies concurrency at fixed chunk size; axis="chunk_ms"
    varies chunk size at fixed concurrency.
    """
    if axis not in ("streams", "chunk_ms"):
        raise InputError(f"unknown sweep axis {axis!r}")
    base_chunk_ms = base_chunk_ms or engine.config.chunk_size_ms
    rows = []
    for value in values:
        streams = value if axis == "streams" else base_streams
        chunk_ms = value if axis == "chunk_ms" else base_chunk_ms
        sources = [workload.samples] * streams
        tp = measure_throughput(engine, sources, workers=workers, chunk_ms=chunk_ms)
        lat = measure_latency(engine, workload.samples, workload.alignments, chunk_ms)
        rows.append(
            {
                "axis": axis,
                "value": value,
                "streams": streams,
                "chunk_ms": chunk_ms,
                "throughput_audio_s_per_s": tp.throughput,
                "rtf": tp.rtf,
                "mean_latency_ms": lat.mean_latency_ms,
                "decode_fraction": tp.decode_fraction,
            }
        )
    return rows


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS)
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def write_csv(path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(rows_to_csv(rows))
