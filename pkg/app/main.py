from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from app.logging import configure_logging
from app.middleware.errors import ErrorMiddleware
from app.routes.http import router as http_router
from app.versions import APP_NAME, APP_VERSION

def create_app() -> FastAPI:
    configure_logging()
    app = FastAPI(title=APP_NAME, version=APP_VERSION)
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_headers=["*"], allow_methods=["*"])
    app.add_middleware(ErrorMiddleware)
    app.include_router(http_router, tags=["http"])
    return app

app = create_app()
