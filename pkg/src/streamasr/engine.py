"""End-to-end online pipeline: chunk ingestion -> frontend -> acoustic model
-> decoder, across many concurrent streams.

The engine object (model, lexicon trie, LM, token set) is immutable and
shared; each stream owns a StreamSession whose sub-states advance in
lockstep. One logical worker owns a session at a time and sessions may move
between workers between chunks; parallelism is across streams only. Per-chunk
processing is synchronous from the caller's view, and the timing log is an
append-only concurrent sink used by the bench harness.
"""

from __future__ import annotations

import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import decoder as dec
from .decoder import DecoderConfig, DecoderState, Transcript
from .errors import ConfigError, StreamError
from .features import Frontend, FrontendConfig
from .lexicon import Lexicon, TokenSet, Trie
from .lm import ArpaLanguageModel
from .model import Model


@dataclass(frozen=True)
class EngineConfig:
    chunk_size_ms: int = 750
    workers: int = 1
    max_streams: int = 1024
    sample_rate: int = 16000
    norm_window: int = 300
    norm_eps: float = 1e-5
    beam_size: int = 50
    top_k: int = 50
    blank_threshold: float = 0.95
    lm_weight: float = 1.0
    word_score: float = 0.0
    history_prune_chunks: int | None = 16
    merge: str = "max"

    def __post_init__(self):
        if self.chunk_size_ms <= 0:
            raise ConfigError("chunk_size_ms must be > 0")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.max_streams < 1:
            raise ConfigError("max_streams must be >= 1")

    def decoder_config(self) -> DecoderConfig:
        return DecoderConfig(
            beam_size=self.beam_size,
            top_k=self.top_k,
            blank_threshold=self.blank_threshold,
            lm_weight=self.lm_weight,
            word_score=self.word_score,
            history_prune_chunks=self.history_prune_chunks,
            merge=self.merge,
        )

    def frontend_config(self) -> FrontendConfig:
        return FrontendConfig(
            sample_rate=self.sample_rate,
            norm_window=self.norm_window,
            norm_eps=self.norm_eps,
        )


@dataclass
class TranscriptEvent:
    """One displayed word: newly finalized (final=True) or current tentative."""

    word: str
    final: bool
    emit_ms: float
    audio_end_ms: float | None = None


@dataclass
class ChunkTiming:
    stream_id: str
    chunk_index: int
    start_s: float
    end_s: float
    audio_s: float
    frontend_s: float = 0.0
    model_s: float = 0.0
    decode_s: float = 0.0


class StreamSession:
    def __init__(self, stream_id: str, engine: "Engine", config: EngineConfig):
        self.stream_id = stream_id
        self.config = config
        self.frontend = Frontend(config.frontend_config())
        self.model_state = engine.model.new_state()
        self.decoder_state = DecoderState(
            engine.token_set, engine.trie, engine.lm, config.decoder_config()
        )
        self.started_at = time.monotonic()
        self.chunk_index = 0
        self.finalized_emitted = 0
        self.audio_samples = 0
        self.stage_seconds = {"frontend": 0.0, "model": 0.0, "decode": 0.0}

    def displayed_words(self) -> list[str]:
        return self.decoder_state.partial().words()


class Engine:
    def __init__(
        self,
        model: Model,
        token_set: TokenSet,
        lexicon: Lexicon,
        lm: ArpaLanguageModel | None = None,
        config: EngineConfig | None = None,
    ):
        if len(token_set) != model.spec.n_tokens:
            raise ConfigError(
                f"token set size {len(token_set)} != model token count {model.spec.n_tokens}"
            )
        self.model = model
        self.token_set = token_set
        self.lexicon = lexicon
        self.trie: Trie = lexicon.compile()
        self.lm = lm
        self.config = config or EngineConfig()
        self._sessions: dict[str, StreamSession] = {}
        self._lock = threading.Lock()
        self._next_id = 0
        self.timing_log: list[ChunkTiming] = []

    # -- stream lifecycle ----------------------------------------------------

    def create_stream(self, **overrides) -> str:
        config = replace(self.config, **overrides) if overrides else self.config
        with self._lock:
            if len(self._sessions) >= config.max_streams:
                raise ConfigError(f"stream limit reached ({config.max_streams})")
            stream_id = f"s{self._next_id:06d}"
            self._next_id += 1
            self._sessions[stream_id] = StreamSession(stream_id, self, config)
        return stream_id

    def open_stream_count(self) -> int:
        with self._lock:
            return len(self._sessions)

    def _session(self, stream_id: str) -> StreamSession:
        with self._lock:
            session = self._sessions.get(stream_id)
        if session is None:
            raise StreamError(f"unknown or closed stream {stream_id!r}")
        return session

    def push_audio(self, stream_id: str, samples: np.ndarray) -> list[TranscriptEvent]:
        """Run one chunk through the full pipeline; returns newly finalized
        words followed by the current tentative suffix."""
        session = self._session(stream_id)
        start = time.monotonic()
        t0 = time.perf_counter()
        feats = session.frontend.process(samples)
        t1 = time.perf_counter()
        emissions = self.model.forward_chunk(session.model_state, feats)
        t2 = time.perf_counter()
        partial = dec.decode_chunk(session.decoder_state, emissions)
        t3 = time.perf_counter()
        end = time.monotonic()

        session.audio_samples += len(samples)
        session.stage_seconds["frontend"] += t1 - t0
        session.stage_seconds["model"] += t2 - t1
        session.stage_seconds["decode"] += t3 - t2
        timing = ChunkTiming(
            stream_id,
            session.chunk_index,
            start - session.started_at,
            end - session.started_at,
            audio_s=len(samples) / session.config.sample_rate,
            frontend_s=t1 - t0,
            model_s=t2 - t1,
            decode_s=t3 - t2,
        )
        self.timing_log.append(timing)
        session.chunk_index += 1
        return self._events(session, partial, end)

    def close_stream(self, stream_id: str) -> Transcript:
        """Drain buffered lookahead, finalize the decoder, release the session."""
        session = self._session(stream_id)
        emissions = self.model.flush(session.model_state)
        dec.decode_chunk(session.decoder_state, emissions)
        transcript = dec.finalize(session.decoder_state)
        with self._lock:
            self._sessions.pop(stream_id, None)
        return transcript

    def _events(self, session: StreamSession, partial, now: float) -> list[TranscriptEvent]:
        emit_ms = (now - session.started_at) * 1000.0
        stride = self.model.output_stride_ms
        events = []
        for word in partial.finalized[session.finalized_emitted :]:
            events.append(
                TranscriptEvent(word.word, True, emit_ms, audio_end_ms=word.end_frame * stride)
            )
        session.finalized_emitted = len(partial.finalized)
        for word in partial.tentative:
            events.append(
                TranscriptEvent(word.word, False, emit_ms, audio_end_ms=word.end_frame * stride)
            )
        return events

    # -- batch driving ---------------------------------------------------------

    def transcribe(self, samples: np.ndarray, chunk_ms: int | None = None) -> Transcript:
        """Push a whole signal through one stream in chunk_ms pieces and close."""
        chunk_ms = chunk_ms or self.config.chunk_size_ms
        sid = self.create_stream()
        step = self.config.sample_rate * chunk_ms // 1000
        offsets = list(range(0, len(samples), step)) or [0]
        for off in offsets:
            self.push_audio(sid, samples[off : off + step])
        return self.close_stream(sid)

    def run_concurrent(
        self,
        sources: list[np.ndarray],
        workers: int | None = None,
        chunk_ms: int | None = None,
    ) -> list[Transcript]:
        """Process many audio streams on a fixed-size worker pool.

        Each stream's chunks run strictly in order (a stream is owned by one
        task); streams interleave freely. Transcripts depend only on each
        stream's own audio and config.
        """
        workers = workers or self.config.workers
        chunk_ms = chunk_ms or self.config.chunk_size_ms
        if workers < 1:
            raise ConfigError("workers must be >= 1")

        def job(samples: np.ndarray) -> Transcript:
            return self.transcribe(samples, chunk_ms)

        if workers == 1:
            return [job(s) for s in sources]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(job, sources))


# ---------------------------------------------------------------------------
# key-value config file (mirrors the CLI flags; flags override the file)
# ---------------------------------------------------------------------------

CONFIG_KEYS = {
    "model": str,
    "tokens": str,
    "lexicon": str,
    "lm": str,
    "chunk_ms": int,
    "workers": int,
    "max_streams": int,
    "sample_rate": int,
    "norm_window": int,
    "norm_eps": float,
    "beam_size": int,
    "topk": int,
    "blank_threshold": float,
    "lm_weight": float,
    "word_score": float,
    "history_prune_chunks": int,
    "merge": str,
}


def parse_config_file(path) -> dict:
    """Parse ``key = value`` lines; '#' starts a comment."""
    values: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for ln, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{ln}: expected 'key = value'")
            key, val = (part.strip() for part in line.split("=", 1))
            if key not in CONFIG_KEYS:
                raise ConfigError(f"{path}:{ln}: unknown key {key!r}")
            try:
                values[key] = CONFIG_KEYS[key](val)
            except ValueError as exc:
                raise ConfigError(f"{path}:{ln}: bad value for {key}: {val!r}") from exc
    return values
