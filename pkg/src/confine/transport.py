"""Client-side transport: real HTTP or in-process loopback.

Both transports expose the same four calls, so the provisioner service and
the miner session never know which one they run over. The loopback hub
keeps experiment sweeps free of socket overhead.
"""

from __future__ import annotations

import logging
from typing import Callable

import requests

__all__ = ["TransportError", "HttpTransport", "LoopbackHub"]

log = logging.getLogger(__name__)


class TransportError(Exception):
    """A peer was unreachable or answered outside the protocol."""

    def __init__(self, url: str, detail: str, status: int | None = None):
        self.url = url
        self.detail = detail
        self.status = status
        super().__init__(f"{url}: {detail}")


class HttpTransport:
    """JSON-over-HTTP client used by the miner and by provisioner pushes."""

    def __init__(self, timeout_s: float = 60.0):
        self.timeout_s = timeout_s
        self._session = requests.Session()

    def _check(self, url: str, resp: requests.Response) -> dict:
        try:
            body = resp.json()
        except ValueError:
            raise TransportError(url, f"non-JSON answer (HTTP {resp.status_code})", resp.status_code)
        if resp.status_code >= 400:
            raise TransportError(url, body.get("error", f"HTTP {resp.status_code}"), resp.status_code)
        return body

    def get_case_refs(self, base_url: str, miner_id: str) -> dict:
        url = base_url.rstrip("/") + "/caserefs"
        try:
            resp = self._session.get(url, params={"miner_id": miner_id}, timeout=self.timeout_s)
        except requests.RequestException as exc:
            raise TransportError(url, str(exc)) from None
        return self._check(url, resp)

    def _post(self, url: str, body: dict) -> dict:
        try:
            resp = self._session.post(url, json=body, timeout=self.timeout_s)
        except requests.RequestException as exc:
            raise TransportError(url, str(exc)) from None
        return self._check(url, resp)

    def post_cases(self, base_url: str, body: dict) -> dict:
        return self._post(base_url.rstrip("/") + "/cases", body)

    def post_attestation(self, base_url: str, body: dict) -> dict:
        return self._post(base_url.rstrip("/") + "/attestation", body)

    def push_segment(self, callback_url: str, body: dict) -> dict:
        return self._post(callback_url.rstrip("/") + "/segments", body)


class LoopbackHub:
    """In-process transport: URLs map to registered service objects.

    Provisioners register under their base URL, segment receivers under the
    miner's callback URL. Errors that the HTTP layer would turn into 4xx
    answers surface as TransportError here as well.
    """

    def __init__(self):
        self._provisioners: dict[str, object] = {}
        self._receivers: dict[str, Callable[[dict], dict]] = {}

    def register_provisioner(self, base_url: str, service) -> None:
        self._provisioners[base_url.rstrip("/")] = service

    def register_receiver(self, callback_url: str, receive: Callable[[dict], dict]) -> None:
        self._receivers[callback_url.rstrip("/")] = receive

    def _service(self, base_url: str):
        svc = self._provisioners.get(base_url.rstrip("/"))
        if svc is None:
            raise TransportError(base_url, "no provisioner registered at this URL")
        return svc

    def get_case_refs(self, base_url: str, miner_id: str) -> dict:
        from .provisioner import AccessDeniedError

        try:
            return self._service(base_url).serve_case_refs(miner_id)
        except AccessDeniedError as exc:
            raise TransportError(base_url, str(exc), status=403) from None

    def post_cases(self, base_url: str, body: dict) -> dict:
        try:
            return self._service(base_url).handle_case_request(body)
        except ValueError as exc:
            raise TransportError(base_url, str(exc), status=400) from None

    def post_attestation(self, base_url: str, body: dict) -> dict:
        try:
            return self._service(base_url).handle_attestation(body)
        except ValueError as exc:
            raise TransportError(base_url, str(exc), status=400) from None

    def push_segment(self, callback_url: str, body: dict) -> dict:
        receive = self._receivers.get(callback_url.rstrip("/"))
        if receive is None:
            raise TransportError(callback_url, "no receiver registered at this URL")
        return receive(body)
