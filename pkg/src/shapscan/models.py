"""Predictor plumbing: built-in analytic models plus an external-process bridge.

Every predictor is a callable mapping a (k, m) batch of feature rows to
a length-k vector of finite reals, with a declared ``arity`` and a
``kind`` tag.  Built-in kinds exist for testing and for scoring image
patches; the ``external`` kind talks to any modeling stack over a
newline-delimited JSON protocol on stdin/stdout:

    -> {"op": "arity"}
    <- {"arity": m}
    -> {"op": "predict", "rows": [[...], ...]}
    <- {"preds": [...]}

One JSON document per line, UTF-8, requests and responses strictly
alternating.  Prediction is deterministic per batch and row-independent:
a k-row batch equals k single-row calls elementwise.
"""

from __future__ import annotations

import json
import queue
import shlex
import subprocess
import threading
from collections import deque
from dataclasses import dataclass
from typing import ClassVar, Mapping, Sequence, Union

import numpy as np
from scipy.special import expit

from .errors import DimensionError, ParameterError, PredictorError, ProtocolError

DEFAULT_PROTOCOL_TIMEOUT = 30.0


def _as_batch(batch, arity: int) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2:
        raise DimensionError(f"prediction batch must be 2-D, got shape {batch.shape}")
    if batch.shape[1] != arity:
        raise DimensionError(f"model expects {arity} features, batch rows have {batch.shape[1]}")
    return batch


@dataclass(frozen=True)
class LinearPredictor:
    """f(x) = weights . x + intercept"""

    weights: np.ndarray
    intercept: float = 0.0
    kind: ClassVar[str] = "linear"

    def __post_init__(self) -> None:
        weights = np.asarray(self.weights, dtype=np.float64)
        if weights.ndim != 1 or weights.shape[0] < 1:
            raise ParameterError("linear predictor needs a non-empty weights vector")
        if not np.all(np.isfinite(weights)) or not np.isfinite(self.intercept):
            raise ParameterError("linear predictor parameters must be finite")
        object.__setattr__(self, "weights", weights)

    @property
    def arity(self) -> int:
        return self.weights.shape[0]

    def __call__(self, batch) -> np.ndarray:
        batch = _as_batch(batch, self.arity)
        # per-row reduction keeps batch and single-row results bit-identical
        return (batch * self.weights).sum(axis=1) + self.intercept


@dataclass(frozen=True)
class ProductPredictor:
    """f(x) = product of all coordinates."""

    arity: int
    kind: ClassVar[str] = "product"

    def __post_init__(self) -> None:
        if int(self.arity) < 1:
            raise ParameterError(f"product predictor arity must be >= 1, got {self.arity}")
        object.__setattr__(self, "arity", int(self.arity))

    def __call__(self, batch) -> np.ndarray:
        batch = _as_batch(batch, self.arity)
        return np.prod(batch, axis=1)


@dataclass(frozen=True)
class ThresholdBlobPredictor:
    """Logistic score of the mean of above-threshold patch intensities.

    Given per-patch summaries, features above ``threshold`` are averaged
    (zero when none clears it) and passed through a logistic curve:
    ``score = expit(steepness * (mean_active - midpoint))``.  Smooth in
    the active patches, flat in the inactive ones, which makes it a
    convenient explanation target for bright-blob detections.
    """

    arity: int
    threshold: float = 0.5
    steepness: float = 8.0
    midpoint: float = 0.55
    kind: ClassVar[str] = "threshold-blob"

    def __post_init__(self) -> None:
        if int(self.arity) < 1:
            raise ParameterError(f"threshold-blob arity must be >= 1, got {self.arity}")
        if not 0.0 < self.threshold < 1.0:
            raise ParameterError(f"threshold must lie in (0, 1), got {self.threshold}")
        object.__setattr__(self, "arity", int(self.arity))

    def __call__(self, batch) -> np.ndarray:
        batch = _as_batch(batch, self.arity)
        active = batch > self.threshold
        counts = active.sum(axis=1)
        sums = (batch * active).sum(axis=1)
        mean_active = np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)
        return expit(self.steepness * (mean_active - self.midpoint))


class ExternalPredictor:
    """Bridge to a model subprocess speaking the JSON-lines protocol.

    The subprocess is spawned on construction and the arity handshake is
    performed immediately.  All requests are serialized through a lock
    (one in-flight request per process); callers needing parallel
    throughput should run several instances.
    """

    kind = "external"

    def __init__(self, cmd: Union[str, Sequence[str]], timeout: float = DEFAULT_PROTOCOL_TIMEOUT):
        self.cmd = shlex.split(cmd) if isinstance(cmd, str) else list(cmd)
        if not self.cmd:
            raise ParameterError("external predictor needs a non-empty command")
        self.timeout = float(timeout)
        self._lock = threading.Lock()
        self._proc: subprocess.Popen | None = None
        self._out_queue: queue.Queue = queue.Queue()
        self._stderr_tail: deque = deque(maxlen=20)
        self._start()
        reply = self._request({"op": "arity"})
        arity = reply.get("arity")
        if not isinstance(arity, int) or arity < 1:
            raise ProtocolError(f"external model sent an invalid arity handshake: {reply!r}")
        self.arity = arity

    def _start(self) -> None:
        try:
            self._proc = subprocess.Popen(
                self.cmd,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise PredictorError(f"failed to start external model {self.cmd!r}: {exc}") from exc
        threading.Thread(target=self._pump_stdout, daemon=True).start()
        threading.Thread(target=self._pump_stderr, daemon=True).start()

    def _pump_stdout(self) -> None:
        proc = self._proc
        assert proc is not None and proc.stdout is not None
        for line in proc.stdout:
            self._out_queue.put(line)
        self._out_queue.put(None)  # EOF sentinel

    def _pump_stderr(self) -> None:
        proc = self._proc
        assert proc is not None and proc.stderr is not None
        for line in proc.stderr:
            self._stderr_tail.append(line.rstrip("\n"))

    def _diagnostic(self) -> str:
        code = self._proc.poll() if self._proc else None
        tail = "; ".join(self._stderr_tail) or "<no stderr>"
        return f"exit code {code}, stderr: {tail}"

    def _request(self, payload: dict) -> dict:
        with self._lock:
            proc = self._proc
            if proc is None or proc.poll() is not None:
                raise PredictorError(f"external model is not running ({self._diagnostic()})")
            try:
                proc.stdin.write(json.dumps(payload) + "\n")
                proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                raise PredictorError(
                    f"external model closed its input ({self._diagnostic()})"
                ) from exc
            try:
                line = self._out_queue.get(timeout=self.timeout)
            except queue.Empty:
                self.close()
                raise ProtocolError(
                    f"external model timed out after {self.timeout} s waiting for a reply"
                ) from None
            if line is None:
                raise PredictorError(f"external model exited mid-protocol ({self._diagnostic()})")
            try:
                reply = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ProtocolError(
                    f"external model sent a non-JSON line: {line.strip()!r}"
                ) from exc
            if not isinstance(reply, dict):
                raise ProtocolError(f"external model reply is not a JSON object: {line.strip()!r}")
            return reply

    def __call__(self, batch) -> np.ndarray:
        batch = _as_batch(batch, self.arity)
        reply = self._request({"op": "predict", "rows": batch.tolist()})
        preds = reply.get("preds")
        if not isinstance(preds, list):
            raise ProtocolError(f"external model reply lacks a 'preds' list: {reply!r}")
        if len(preds) != batch.shape[0]:
            raise ProtocolError(
                f"external model returned {len(preds)} predictions for {batch.shape[0]} rows"
            )
        out = np.asarray(preds, dtype=np.float64)
        if out.ndim != 1 or not np.all(np.isfinite(out)):
            raise PredictorError("external model returned non-finite or non-scalar predictions")
        return out

    def close(self) -> None:
        proc, self._proc = self._proc, None
        if proc is None:
            return
        for stream in (proc.stdin,):
            try:
                if stream:
                    stream.close()
            except OSError:
                pass
        try:
            proc.wait(timeout=2.0)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()

    def __enter__(self) -> "ExternalPredictor":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def __del__(self) -> None:
        try:
            self.close()
        except Exception:
            pass


def predict(model, batch) -> np.ndarray:
    """Evaluate a predictor on a batch, enforcing arity and output contracts."""
    arity = getattr(model, "arity", None)
    if arity is None:
        raise ParameterError("model does not declare an arity")
    batch = _as_batch(batch, arity)
    out = np.asarray(model(batch), dtype=np.float64)
    if out.shape != (batch.shape[0],):
        raise PredictorError(f"model returned shape {out.shape} for {batch.shape[0]} rows")
    if not np.all(np.isfinite(out)):
        raise PredictorError("model returned non-finite predictions")
    return out


def external_protocol_roundtrip(cmd, batch, timeout: float = DEFAULT_PROTOCOL_TIMEOUT) -> np.ndarray:
    """One-shot handshake + predict against an external model command."""
    with ExternalPredictor(cmd, timeout=timeout) as model:
        return model(np.asarray(batch, dtype=np.float64))


def load_predictor(spec: Mapping):
    """Build a predictor from a configuration record.

    Known kinds: ``linear`` (weights, intercept), ``product`` (arity),
    ``threshold-blob`` (arity, threshold, steepness, midpoint) and
    ``external`` (cmd, timeout; arity comes from the handshake).
    """
    if not isinstance(spec, Mapping):
        raise ParameterError(f"predictor spec must be a mapping, got {type(spec).__name__}")
    kind = spec.get("kind")
    if kind == "linear":
        if "weights" not in spec:
            raise ParameterError("linear predictor spec needs 'weights'")
        return LinearPredictor(np.asarray(spec["weights"], dtype=np.float64),
                               float(spec.get("intercept", 0.0)))
    if kind == "product":
        if "arity" not in spec:
            raise ParameterError("product predictor spec needs 'arity'")
        return ProductPredictor(int(spec["arity"]))
    if kind == "threshold-blob":
        if "arity" not in spec:
            raise ParameterError("threshold-blob predictor spec needs 'arity'")
        return ThresholdBlobPredictor(
            int(spec["arity"]),
            threshold=float(spec.get("threshold", 0.5)),
            steepness=float(spec.get("steepness", 8.0)),
            midpoint=float(spec.get("midpoint", 0.55)),
        )
    if kind == "external":
        if "cmd" not in spec:
            raise ParameterError("external predictor spec needs 'cmd'")
        return ExternalPredictor(spec["cmd"], timeout=float(spec.get("timeout", DEFAULT_PROTOCOL_TIMEOUT)))
    raise ParameterError(f"unknown predictor kind: {kind!r}")
