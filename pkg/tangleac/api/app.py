"""FastAPI application exposing the owner's ``/auth`` and ``/access`` endpoints."""
import logging

import fastapi
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from ..core.owner import Decision, OwnerService, Reason, access_endpoint, auth_endpoint

log = logging.getLogger(__name__)


def create_app(owner: OwnerService) -> fastapi.FastAPI:
    """Build the wire API around an owner.

    Parameters
    ----------
    owner : OwnerService
        Service every request is dispatched to

    Returns
    -------
    fastapi.FastAPI
    """
    app = fastapi.FastAPI(title='tangleac owner')
    app.state.owner = owner

    @app.exception_handler(RequestValidationError)
    async def _invalid_body(request: fastapi.Request, exc: RequestValidationError):
        log.debug('Invalid body on {}: {}'.format(request.url.path, exc))
        if request.url.path == '/access':
            return JSONResponse(status_code=200, content=Decision.deny(Reason.MALFORMED).to_wire())
        return JSONResponse(status_code=400, content={'error': 'parse'})

    # Sync handlers run in the threadpool
    @app.post('/auth')
    def auth(body: dict = fastapi.Body(...)):
        status, payload = auth_endpoint(owner, body)
        return JSONResponse(status_code=status, content=payload)

    @app.post('/access')
    def access(body: dict = fastapi.Body(...)):
        status, payload = access_endpoint(owner, body)
        return JSONResponse(status_code=status, content=payload)

    @app.get('/health')
    def health():
        return {'policies': len(owner.table), 'outstanding_otps': len(owner.otps)}

    return app
