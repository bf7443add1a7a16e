from fastapi import Request
from fastapi.responses import JSONResponse
from starlette.middleware.base import BaseHTTPMiddleware
import logging

from app.exceptions import MeshfreeError

logger = logging.getLogger(__name__)

class ErrorMiddleware(BaseHTTPMiddleware):
    async def dispatch(self, request: Request, call_next):
        try:
            return await call_next(request)
        except MeshfreeError as e:
            logger.warning("%s on %s: %s", type(e).__name__, request.url.path, e)
            return JSONResponse(
                {"error": type(e).__name__, "message": str(e)},
                status_code=422
            )
        except Exception:
            logger.exception("Unhandled error")
            return JSONResponse(
                {"error": "internal_error", "message": "Something went wrong."},
                status_code=500
            )
