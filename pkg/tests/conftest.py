import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest


class StubChatServer:
    """Local chat-completion endpoint with a scripted reply queue.

    Each queued entry is ``(status, payload)``; when the queue runs dry the
    ``default`` entry is used.  Request bodies are recorded in arrival order.
    """

    def __init__(self):
        self.requests = []
        self.headers = []
        self.queue = []
        self.default = (200, self.reply("Final answer: 1"))
        self.responder = None
        self._lock = threading.Lock()
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length) or b"{}")
                with outer._lock:
                    outer.requests.append({"path": self.path, "body": body})
                    outer.headers.append(dict(self.headers))
                    if outer.responder is not None:
                        status, payload = outer.responder(body)
                    elif outer.queue:
                        status, payload = outer.queue.pop(0)
                    else:
                        status, payload = outer.default
                data = json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self.thread.start()

    @property
    def base_url(self):
        host, port = self.httpd.server_address
        return f"http://{host}:{port}"

    @staticmethod
    def reply(content, prompt_tokens=120, completion_tokens=30):
        return {
            "choices": [{"message": {"role": "assistant", "content": content}}],
            "usage": {"prompt_tokens": prompt_tokens, "completion_tokens": completion_tokens},
        }

    def close(self):
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def stub_server():
    server = StubChatServer()
    yield server
    server.close()


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
