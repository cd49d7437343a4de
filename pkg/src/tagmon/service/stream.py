"""Newline-delimited JSON feed over TCP, plus an optional MQTT bridge.

A client connects and sends one line naming the topic patterns it wants
(``SUB anomalies records/+``; an empty line subscribes to everything).
Every message published afterwards on a matching topic is written as one
JSON line ``{"topic": ..., "seq": ..., "payload": ...}``. A client that
falls behind by more than the buffer gets an overflow line and is closed.
"""

from __future__ import annotations

import json
import logging
import socket
import socketserver
import threading
from typing import Optional

from .bus import Bus, OVERFLOW_TOPIC

log = logging.getLogger(__name__)


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        bus: Bus = self.server.bus
        try:
            line = self.rfile.readline(4096).decode("utf-8", "replace").strip()
        except OSError:
            return
        words = line.split()
        if words and words[0].upper() == "SUB":
            words = words[1:]
        sub = bus.subscribe(words or ["#"])
        try:
            hello = {"topic": "$control/subscribed", "payload": {"patterns": list(sub.patterns)}}
            self.wfile.write(json.dumps(hello).encode() + b"\n")
            while not self.server.stopping.is_set():
                item = sub.get(timeout=0.5)
                if item is None:
                    if sub.closed:
                        break
                    continue
                topic, text = item
                self.wfile.write(text.encode() + b"\n")
                if topic == OVERFLOW_TOPIC:
                    break
        except OSError:
            pass
        finally:
            sub.close()


class StreamServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, bus: Bus, host: str = "127.0.0.1", port: int = 8765):
        self.bus = bus
        self.stopping = threading.Event()
        super().__init__((host, port), _Handler)

    def start(self) -> threading.Thread:
        th = threading.Thread(target=self.serve_forever, name="stream", daemon=True)
        th.start()
        return th

    def stop(self) -> None:
        self.stopping.set()
        self.shutdown()
        self.server_close()


def read_feed(host: str, port: int, patterns=("#",), limit: Optional[int] = None,
              timeout: float = 5.0):
    """Minimal client: yields decoded messages (used by tests and the CLI)."""
    with socket.create_connection((host, port), timeout=timeout) as s:
        s.sendall(("SUB " + " ".join(patterns) + "\n").encode())
        f = s.makefile("rb")
        n = 0
        for raw in f:
            msg = json.loads(raw)
            yield msg
            n += 1
            if limit is not None and n >= limit:
                return


class MqttBridge:
    """Forwards every bus message to an MQTT broker under the same topic names."""

    def __init__(self, bus: Bus, host: str, port: int = 1883, prefix: str = ""):
        try:
            import paho.mqtt.client as mqtt
        except ImportError as exc:  # optional dependency
            raise RuntimeError("MQTT bridging needs the paho-mqtt package") from exc
        self.prefix = prefix
        self.client = mqtt.Client()
        self.client.connect(host, port)
        self.client.loop_start()
        self.sub = bus.subscribe(["#"])
        self._stop = threading.Event()
        self.thread = threading.Thread(target=self._pump, name="mqtt", daemon=True)
        self.thread.start()

    def _pump(self):
        while not self._stop.is_set():
            item = self.sub.get(timeout=0.5)
            if item is None:
                if self.sub.closed:
                    log.warning("MQTT bridge fell behind and was disconnected")
                    return
                continue
            topic, text = item
            self.client.publish(self.prefix + topic, text)

    def stop(self):
        self._stop.set()
        self.sub.close()
        self.client.loop_stop()
        self.client.disconnect()
