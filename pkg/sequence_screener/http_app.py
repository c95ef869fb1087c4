"""
FastAPI surfaces of the keyserver and the database server.

Routes only translate HTTP into ``dispatch`` calls on the service object, so the
HTTP and in-memory transports exercise the same code paths.
"""
import logging
from typing import Any, Dict

from fastapi import Body, FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .config import Config
from .errors import ScreenerError
from .hashdb import HashDbServer
from .keyserver import Keyserver

logger = logging.getLogger(__name__)


class SwapRequest(BaseModel):
    path: str

    model_config = {'extra': 'allow'}


class RekeyRequest(BaseModel):
    update_key_id: str
    update_epoch: int
    key_id: str
    epoch: int

    model_config = {'extra': 'allow'}


class RoundMessage(BaseModel):
    round: str
    to: int

    model_config = {'extra': 'allow'}


def _peer(request: Request) -> str:
    return request.client.host if request.client else 'unknown'


def _install_error_handler(app: FastAPI):
    @app.exception_handler(ScreenerError)
    async def screener_error(request: Request, exc: ScreenerError):
        logger.warning("%s %s rejected: %s", request.method, request.url.path, exc.code)
        return JSONResponse(status_code=exc.status, content=exc.to_payload())


def create_keyserver_app(server: Keyserver) -> FastAPI:
    app = FastAPI(title=f'keyserver {server.index}', version=str(Config.PROTOCOL_VERSION))
    _install_error_handler(app)

    @app.get('/status')
    def status(request: Request) -> Dict[str, Any]:
        return server.dispatch('GET', '/status', None, _peer(request))

    @app.post('/eval')
    def evaluate(request: Request, payload: Dict[str, Any] = Body(...)) -> Dict[str, Any]:
        return server.dispatch('POST', '/eval', payload, _peer(request))

    @app.post('/admin/round')
    def round_message(request: Request, message: RoundMessage) -> Dict[str, Any]:
        return server.dispatch('POST', '/admin/round', message.model_dump(), _peer(request))

    return app


def create_hashdb_app(server: HashDbServer) -> FastAPI:
    app = FastAPI(title='hazard database', version=str(Config.PROTOCOL_VERSION))
    _install_error_handler(app)

    @app.post('/screen')
    def screen(request: Request, payload: Dict[str, Any] = Body(...)) -> Dict[str, Any]:
        return server.dispatch('POST', '/screen', payload, _peer(request))

    @app.get('/version')
    def version(request: Request) -> Dict[str, Any]:
        return server.dispatch('GET', '/version', None, _peer(request))

    @app.get('/certificate')
    def certificate(request: Request) -> Dict[str, Any]:
        return server.dispatch('GET', '/certificate', None, _peer(request))

    @app.post('/admin/swap')
    def swap(request: Request, body: SwapRequest) -> Dict[str, Any]:
        return server.dispatch('POST', '/admin/swap', body.model_dump(), _peer(request))

    @app.post('/admin/rekey')
    def rekey(request: Request, body: RekeyRequest) -> Dict[str, Any]:
        return server.dispatch('POST', '/admin/rekey', body.model_dump(), _peer(request))

    @app.get('/admin/counters')
    def counters(request: Request) -> Dict[str, Any]:
        return server.dispatch('GET', '/admin/counters', None, _peer(request))

    return app
