"""HTTP/JSON oracle protocol: client and a stub server backed by annotations.

One POST per question to the configured endpoint::

    request   {"image_id": "...", "question_text": "..."}
    response  200 {"answer": "...", "confidence": 0.93}     (confidence optional)
              422 {"error": "..."}    question not applicable to this image
              404 {"error": "..."}    unknown image

Connection failures, timeouts and 5xx replies are retried with exponential
backoff; everything else fails immediately.
"""

from __future__ import annotations

import json
import logging
import threading
import time
import urllib.error
import urllib.request
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .vqa import (
    AnnotationOracle,
    Answer,
    AnswerNormalizationError,
    NotApplicableError,
    OracleError,
    Question,
    UnknownImageError,
    Vocabulary,
    parse_question,
)

logger = logging.getLogger(__name__)


class OracleTransportError(OracleError):
    """The endpoint could not be reached after all retries."""


class RemoteOracle:
    kind = "remote"

    def __init__(
        self,
        endpoint: str,
        vocab: Vocabulary | None = None,
        *,
        timeout: float = 30.0,
        attempts: int = 3,
        backoff: float = 0.2,
        max_in_flight: int = 8,
    ):
        if attempts < 1 or max_in_flight < 1:
            raise ValueError("attempts and max_in_flight must be >= 1")
        self.endpoint = endpoint
        self.vocab = vocab or Vocabulary()
        self.timeout = timeout
        self.attempts = attempts
        self.backoff = backoff
        self._slots = threading.BoundedSemaphore(max_in_flight)

    def _post(self, payload: dict) -> tuple[int, dict]:
        req = urllib.request.Request(
            self.endpoint,
            data=json.dumps(payload).encode(),
            headers={"Content-Type": "application/json"},
            method="POST",
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return resp.status, json.loads(resp.read() or b"{}")
        except urllib.error.HTTPError as exc:
            try:
                body = json.loads(exc.read() or b"{}")
            except json.JSONDecodeError:
                body = {}
            return exc.code, body

    def answer(self, image_id: str, question: Question) -> Answer:
        payload = {"image_id": image_id, "question_text": question.text}
        last: Exception | None = None
        for attempt in range(self.attempts):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                with self._slots:
                    status, body = self._post(payload)
            except (urllib.error.URLError, TimeoutError, ConnectionError, json.JSONDecodeError) as exc:
                last = exc
                logger.debug("oracle attempt %d failed: %s", attempt + 1, exc)
                continue
            if status >= 500:
                last = OracleError(f"HTTP {status}: {body.get('error', '')}")
                continue
            if status == 422:
                raise NotApplicableError(body.get("error", "not applicable"))
            if status == 404:
                raise UnknownImageError(body.get("error", f"unknown image {image_id!r}"))
            if status != 200:
                raise OracleError(f"HTTP {status}: {body.get('error', '')}")
            return self._normalize(body)
        raise OracleTransportError(f"{self.endpoint}: gave up after {self.attempts} attempts ({last})")

    def _normalize(self, body: dict) -> Answer:
        raw = body.get("answer")
        if not isinstance(raw, str):
            raise AnswerNormalizationError(repr(raw), "response has no string 'answer'")
        value = self.vocab.normalize(raw)
        if not self.vocab.is_answer(value):
            raise AnswerNormalizationError(raw)
        conf = body.get("confidence")
        if conf is not None:
            conf = float(conf)
            if not 0.0 <= conf <= 1.0:
                conf = None
        return Answer(value, conf)


class StubOracleServer:
    """Serve an :class:`AnnotationOracle` (or scripted replies) over the oracle protocol.

    Use as a context manager; ``url`` is the endpoint to hand to
    :class:`RemoteOracle`. ``fail_first`` makes the first N requests return 503.
    """

    def __init__(self, oracle: AnnotationOracle, host: str = "127.0.0.1", port: int = 0, *, fail_first: int = 0, raw_answers: dict | None = None):
        self.oracle = oracle
        self.fail_first = fail_first
        self.raw_answers = raw_answers or {}
        self.requests = 0
        self._lock = threading.Lock()
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):  # silence
                pass

            def _reply(self, status: int, body: dict) -> None:
                data = json.dumps(body).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                with stub._lock:
                    stub.requests += 1
                    failing = stub.requests <= stub.fail_first
                if failing:
                    return self._reply(503, {"error": "scripted failure"})
                try:
                    req = json.loads(self.rfile.read(length))
                    image_id, text = req["image_id"], req["question_text"]
                except (ValueError, KeyError):
                    return self._reply(400, {"error": "bad request"})
                if (image_id, text) in stub.raw_answers:
                    return self._reply(200, {"answer": stub.raw_answers[image_id, text]})
                try:
                    question = parse_question(text, stub.oracle.vocab)
                    ans = stub.oracle.answer(image_id, question)
                except UnknownImageError as exc:
                    return self._reply(404, {"error": str(exc)})
                except NotApplicableError as exc:
                    return self._reply(422, {"error": str(exc)})
                except ValueError as exc:
                    return self._reply(400, {"error": str(exc)})
                body = {"answer": ans.value}
                if ans.confidence is not None:
                    body["confidence"] = ans.confidence
                return self._reply(200, body)

        self._server = ThreadingHTTPServer((host, port), Handler)
        self._server.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}/answer"

    def start(self) -> "StubOracleServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self) -> "StubOracleServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
