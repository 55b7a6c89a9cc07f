"""Blinded rating sessions: deck assembly, trial serving, durable response
recording, and report generation.

State is an append-only JSON-lines event log per session plus a deck file;
a response is acknowledged only after its record hits disk, so a crash
between write and ack replays cleanly on restart. Rater-facing payloads
carry exactly {index, image, questions} and never any truth."""

from __future__ import annotations

import base64
import json
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .io import append_jsonl, read_jsonl, read_pgm
from .metrics import MetricError, vtt_score

REALNESS_QUESTION = {
    "id": "realness",
    "prompt": "Is this image real or synthetic?",
    "options": ["real", "synthetic"],
}
PATHOLOGY_QUESTION = {
    "id": "pathology",
    "prompt": "Does this image show a lesion?",
    "options": ["tumor", "non-tumor"],
}
QUESTIONS = {"realness": REALNESS_QUESTION, "pathology": PATHOLOGY_QUESTION}


class SessionError(ValueError):
    pass


@dataclass
class DeckItem:
    image_path: str
    true_label: str                  # 'real' | 'synthetic', never serialized to raters
    tumor_label: str | None = None   # 'tumor' | 'non-tumor' when known


@dataclass
class TrialDeck:
    session_id: str
    items: list[DeckItem]
    questions: list[str]
    counts: dict[str, int]


@dataclass
class _Session:
    deck: TrialDeck
    responses: dict[int, dict] = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)


def _pool_entry(entry) -> tuple[str, str | None]:
    if isinstance(entry, (str, Path)):
        return str(entry), None
    return str(entry["path"]), entry.get("tumor_label")


class VttStore:
    """Durable session backend rooted at a data directory."""

    def __init__(self, data_dir: str | Path):
        self.root = Path(data_dir)
        (self.root / "sessions").mkdir(parents=True, exist_ok=True)
        self._sessions: dict[str, _Session] = {}
        self._replay()

    # -- persistence --------------------------------------------------------

    def _dir(self, session_id: str) -> Path:
        return self.root / "sessions" / session_id

    def _replay(self) -> None:
        for sdir in sorted((self.root / "sessions").iterdir()):
            deck_file = sdir / "deck.json"
            if not deck_file.exists():
                continue
            raw = json.loads(deck_file.read_text())
            deck = TrialDeck(
                session_id=raw["session_id"],
                items=[DeckItem(**item) for item in raw["items"]],
                questions=raw["questions"],
                counts=raw["counts"],
            )
            session = _Session(deck)
            events = sdir / "events.jsonl"
            if events.exists():
                for rec in read_jsonl(events):
                    if rec.get("type") == "response":
                        session.responses[int(rec["index"])] = rec["answers"]
            self._sessions[deck.session_id] = session

    # -- operations ----------------------------------------------------------

    def create_session(self, real_pool: Sequence, synth_pool: Sequence,
                       counts: tuple[int, int] = (50, 50),
                       question_set: Sequence[str] = ("realness",),
                       seed: int = 0) -> TrialDeck:
        """Sample without replacement from each pool and shuffle the deck."""
        n_real, n_synth = counts
        if n_real + n_synth < 1:
            raise SessionError("empty deck requested")
        if n_real > len(real_pool) or n_synth > len(synth_pool):
            raise SessionError(
                f"pool too small: need {n_real}+{n_synth}, "
                f"have {len(real_pool)}+{len(synth_pool)}")
        for q in question_set:
            if q not in QUESTIONS:
                raise SessionError(f"unknown question set {q!r}")
        rng = np.random.default_rng(seed)
        picks = []
        for pool, count, label in ((real_pool, n_real, "real"), (synth_pool, n_synth, "synthetic")):
            idx = rng.choice(len(pool), size=count, replace=False)
            for i in idx:
                path, tumor = _pool_entry(pool[i])
                picks.append(DeckItem(path, label, tumor))
        order = rng.permutation(len(picks))
        items = [picks[i] for i in order]
        session_id = uuid.uuid4().hex[:12]
        deck = TrialDeck(session_id, items, list(question_set),
                         {"real": n_real, "synthetic": n_synth})
        sdir = self._dir(session_id)
        sdir.mkdir(parents=True)
        (sdir / "deck.json").write_text(json.dumps({
            "session_id": session_id,
            "items": [vars(it) for it in items],
            "questions": deck.questions,
            "counts": deck.counts,
        }))
        self._sessions[session_id] = _Session(deck)
        return deck

    def _session(self, session_id: str) -> _Session:
        s = self._sessions.get(session_id)
        if s is None:
            raise SessionError(f"unknown session {session_id!r}")
        return s

    def next_trial(self, session_id: str) -> dict:
        """The next unanswered item; payload fields are exactly
        {index, image, questions}."""
        s = self._session(session_id)
        with s.lock:
            for i, item in enumerate(s.deck.items):
                if i not in s.responses:
                    pixels = read_pgm(item.image_path)
                    h, w = pixels.shape
                    return {
                        "index": i,
                        "image": {
                            "width": int(w),
                            "height": int(h),
                            "pixels": base64.b64encode(pixels.tobytes()).decode("ascii"),
                        },
                        "questions": [QUESTIONS[q] for q in s.deck.questions],
                    }
        raise SessionError("deck exhausted")

    def record_response(self, session_id: str, index: int, answers: dict,
                        timestamp: float | None = None) -> dict:
        """Append the response to the durable log, then acknowledge."""
        s = self._session(session_id)
        with s.lock:
            if not 0 <= index < len(s.deck.items):
                raise SessionError(f"item index {index} outside deck")
            if index in s.responses:
                raise SessionError(f"item {index} already answered")
            for q in s.deck.questions:
                opts = QUESTIONS[q]["options"]
                if answers.get(q) not in opts:
                    raise SessionError(f"answer for {q!r} must be one of {opts}")
            record = {"type": "response", "index": index, "answers": answers,
                      "timestamp": timestamp}
            append_jsonl(self._dir(session_id) / "events.jsonl", record, fsync=True)
            s.responses[index] = answers
            return {"status": "ok", "recorded": index,
                    "answered": len(s.responses), "total": len(s.deck.items)}

    def finalize_report(self, session_id: str, allow_partial: bool = False) -> dict:
        s = self._session(session_id)
        with s.lock:
            total = len(s.deck.items)
            answered = sorted(s.responses)
            if len(answered) < total and not allow_partial:
                raise SessionError(
                    f"{total - len(answered)} items unanswered; pass allow_partial to force")
            report: dict = {"session_id": session_id, "complete": len(answered) == total,
                            "answered": len(answered), "total": total, "questions": {}}
            rows = [(i, s.deck.items[i], s.responses[i]) for i in answered]
            if "realness" in s.deck.questions:
                resp = [{"true_label": it.true_label, "answered_label": ans["realness"]}
                        for _, it, ans in rows]
                rep = vtt_score(resp)
                report["questions"]["realness"] = {
                    "accuracy": rep.accuracy, "cells": rep.cells, "counts": rep.counts}
            if "pathology" in s.deck.questions:
                resp = [{"true_label": it.tumor_label, "answered_label": ans["pathology"]}
                        for _, it, ans in rows if it.tumor_label is not None]
                if resp:
                    rep = vtt_score(resp, labels=("tumor", "non-tumor"))
                    report["questions"]["pathology"] = {
                        "accuracy": rep.accuracy, "cells": rep.cells, "counts": rep.counts}
            if not report["questions"]:
                raise MetricError("no scorable responses")
            return report


# ---------------------------------------------------------------------------
# HTTP surface

def make_handler(store: VttStore):
    from http.server import BaseHTTPRequestHandler

    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):  # silence request spam
            pass

        def _send(self, code: int, body: dict) -> None:
            data = json.dumps(body).encode("utf-8")
            self.send_response(code)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(data)

        def _body(self) -> dict:
            length = int(self.headers.get("Content-Length", 0))
            return json.loads(self.rfile.read(length) or b"{}")

        def do_OPTIONS(self):
            self.send_response(204)
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
            self.send_header("Access-Control-Allow-Headers", "Content-Type")
            self.end_headers()

        def do_POST(self):
            parts = self.path.strip("/").split("/")
            try:
                if parts == ["sessions"]:
                    body = self._body()
                    real = sorted(Path(body["real_dir"]).glob("*.pgm"))
                    synth = sorted(Path(body["synthetic_dir"]).glob("*.pgm"))
                    deck = store.create_session(
                        real, synth,
                        counts=(int(body.get("count_real", 50)),
                                int(body.get("count_synthetic", 50))),
                        question_set=body.get("questions", ["realness"]),
                        seed=int(body.get("seed", 0)))
                    self._send(200, {"session_id": deck.session_id,
                                     "item_count": len(deck.items)})
                elif len(parts) == 3 and parts[0] == "sessions" and parts[2] == "responses":
                    body = self._body()
                    ack = store.record_response(parts[1], int(body["index"]),
                                                body.get("answers", {}),
                                                body.get("timestamp"))
                    self._send(200, ack)
                else:
                    self._send(404, {"error": f"no route {self.path}"})
            except SessionError as e:
                code = 409 if "already answered" in str(e) or "exhausted" in str(e) else 400
                self._send(code, {"error": str(e)})
            except (KeyError, ValueError) as e:
                self._send(400, {"error": str(e)})

        def do_GET(self):
            parts = self.path.split("?")[0].strip("/").split("/")
            try:
                if len(parts) == 3 and parts[0] == "sessions" and parts[2] == "next":
                    self._send(200, store.next_trial(parts[1]))
                elif len(parts) == 3 and parts[0] == "sessions" and parts[2] == "report":
                    partial = "partial=1" in self.path
                    self._send(200, store.finalize_report(parts[1], allow_partial=partial))
                else:
                    self._send(404, {"error": f"no route {self.path}"})
            except SessionError as e:
                code = 409 if "exhausted" in str(e) else 400
                self._send(code, {"error": str(e)})

    return Handler


def serve(store: VttStore, host: str = "127.0.0.1", port: int = 8765):
    """Start the threaded HTTP server; caller owns shutdown."""
    from http.server import ThreadingHTTPServer

    server = ThreadingHTTPServer((host, port), make_handler(store))
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server
