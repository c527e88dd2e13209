import asyncio
import json

import pytest
from aiohttp import test_utils, web

from pyegd import (
    BadRequest,
    DetectionEvent,
    EGDException,
    Gesture,
    InvalidServerResponse,
    MonitorSummary,
    NotFound,
    Task,
    Unauthorized,
    WindowSource,
)
from pyegd.http import HTTPClient, Route

EVENT = DetectionEvent(
    frame=59, source=WindowSource('S_B001', 1, 0), task=Task.suturing, gesture=Gesture.G1,
    verdict=1, score=0.75, latency_ms=2.5, model_ms=1.0, label=1,
)


async def with_collector(handlers, body, token=None):
    app = web.Application()
    for path, handler in handlers.items():
        app.router.add_post(path, handler)
    server = test_utils.TestServer(app)
    await server.start_server()
    try:
        async with HTTPClient(str(server.make_url('/')), token=token) as client:
            return await body(client)
    finally:
        await server.close()


def test_route_joins_base_and_path():
    assert Route('http://collector', 'POST', '/events').url == 'http://collector/events'
    assert Route('http://collector', 'POST').url == 'http://collector'


def test_post_event():
    received = []

    async def events(request):
        received.append((await request.json(), request.headers.get('Authorization')))
        return web.json_response({'ok': True})

    result = asyncio.run(with_collector({'/events': events}, lambda client: client.post_event(EVENT), token='t0k'))

    assert result == {'ok': True}
    payload, authorization = received[0]
    assert payload == EVENT.to_dict()
    assert authorization == 'Bearer t0k'


def test_post_summary_without_content():
    received = []

    async def summary(request):
        received.append(await request.json())
        return web.Response(status=204)

    report = MonitorSummary([EVENT], budget_ms=1333.3333)
    result = asyncio.run(with_collector({'/summary': summary}, lambda client: client.post_summary(report)))

    assert result is None
    assert received == [json.loads(json.dumps(report.row()))]


@pytest.mark.parametrize('status, error', [
    (400, BadRequest),
    (401, Unauthorized),
    (404, NotFound),
    (500, InvalidServerResponse),
])
def test_status_mapping(status, error):
    async def events(request):
        return web.json_response({'message': 'no'}, status=status)

    with pytest.raises(error):
        asyncio.run(with_collector({'/events': events}, lambda client: client.post_event(EVENT)))


def test_unknown_path_is_not_found():
    with pytest.raises(NotFound):
        asyncio.run(with_collector({}, lambda client: client.post_event(EVENT)))


def test_non_json_answer():
    async def events(request):
        return web.Response(text='<html>ok</html>', content_type='text/html')

    with pytest.raises(InvalidServerResponse):
        asyncio.run(with_collector({'/events': events}, lambda client: client.post_event(EVENT)))


def test_closed_client():
    with pytest.raises(EGDException):
        asyncio.run(HTTPClient('http://collector').post_event(EVENT))
