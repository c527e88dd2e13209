from __future__ import annotations

import json
import logging
from typing import TYPE_CHECKING, Any, Dict, Optional

import aiohttp

from .errors import BadRequest, EGDException, InvalidServerResponse, NotFound, Unauthorized

if TYPE_CHECKING:
    from .monitor import DetectionEvent, MonitorSummary

__all__ = ('Route', 'HTTPClient')

log = logging.getLogger(__name__)


class Route:
    def __init__(self, route: str, method: str, path: Optional[str] = None) -> None:
        self.base: str = route
        self.method: str = method
        self.path: Optional[str] = path
        self.url: str = self.base + self.path if self.path else self.base


class HTTPClient:
    """
    Posts detection events and monitor summaries to a collector as JSON.

    Events go to ``POST {base}/events``, summaries to ``POST {base}/summary``.
    Usable as an async context manager.
    """

    def __init__(self, route: str, *, token: Optional[str] = None) -> None:
        self.base: str = route.rstrip('/')
        self.token: Optional[str] = token
        self.session: Optional[aiohttp.ClientSession] = None

    async def open(self) -> None:
        if not self.session:
            self.session = aiohttp.ClientSession()

    async def close(self) -> None:
        if self.session:
            await self.session.close()
            self.session = None

    async def __aenter__(self) -> HTTPClient:
        await self.open()
        return self

    async def __aexit__(self, *exc_info: Any) -> None:
        await self.close()

    async def request(self, route: Route, **kwargs: Any) -> Any:
        headers: Dict[str, str] = kwargs.pop('headers', {'Content-Type': 'application/json'})

        if not self.session:
            raise EGDException('the event sink is not open')

        if self.token:
            headers['Authorization'] = f'Bearer {self.token}'

        async with self.session.request(route.method, route.url, headers=headers, **kwargs) as response:
            content_type = response.headers.get('content-type', '')

            if not 200 <= response.status < 300:
                error = await response.json() if content_type.startswith('application/json') else await response.text()

                if response.status == 400:
                    raise BadRequest(error)
                if response.status == 401:
                    raise Unauthorized(error)
                if response.status == 404:
                    raise NotFound(error)
                raise InvalidServerResponse(f'collector answered {response.status}: {error}')

            if response.status == 204 or response.content_length == 0:
                return None

            if not content_type.startswith('application/json'):
                raise InvalidServerResponse(f'expected application/json, got {content_type}')

            return await response.json(encoding='utf-8')

    async def post_event(self, event: DetectionEvent) -> Any:
        return await self.request(
            Route(self.base, 'POST', '/events'),
            data=event.to_json()
        )

    async def post_summary(self, summary: MonitorSummary) -> Any:
        log.debug('posting monitor summary to %s', self.base)
        return await self.request(
            Route(self.base, 'POST', '/summary'),
            data=json.dumps(summary.row())
        )
