"""HTTP JSON service over one or more read-only index snapshots.

Endpoints:
    POST /indexes/{name}/search   body: SearchRequest wire form
    GET  /indexes/{name}/stats    n, d, encoder binding, token count
    GET  /healthz                 liveness

Request parsing is strict: unknown JSON fields are rejected so query DSL
typos fail loudly (status 400 with the offending field path). A vector of
the wrong length is 422 naming the expected dimension. Indexes are opened
once at startup and never mutated, so concurrent requests need no locking.
"""
from __future__ import annotations

import logging
import math
import os
import time
from typing import Annotated, Literal, Optional, Union

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .errors import DimensionMismatchError, UnknownFilterFieldError
from .index import Filter, TokenIndex, open_snapshot
from .search import Query, search

logger = logging.getLogger("tokvec.service")

DEFAULT_WINDOW_FACTOR = 10


class TermFilterModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    type: Literal["term"]
    field: str
    value: str


class RangeFilterModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    type: Literal["range"]
    field: str
    gte: Optional[float] = None
    lte: Optional[float] = None

    @model_validator(mode="after")
    def _check_bounds(self):
        if self.gte is None and self.lte is None:
            raise ValueError("range filter needs gte and/or lte")
        for bound in (self.gte, self.lte):
            if bound is not None and not math.isfinite(bound):
                raise ValueError("range bounds must be finite")
        if self.gte is not None and self.lte is not None and self.gte > self.lte:
            raise ValueError(f"gte {self.gte} exceeds lte {self.lte}")
        return self


FilterModel = Annotated[
    Union[TermFilterModel, RangeFilterModel], Field(discriminator="type")
]


class SearchRequestModel(BaseModel):
    """Wire form of a search: vector, size, window, filters."""

    model_config = ConfigDict(extra="forbid")

    vector: list[float]
    size: int = Field(default=10, ge=1)
    window: Optional[int] = Field(default=None, ge=1)
    filters: list[FilterModel] = Field(default_factory=list)

    @field_validator("vector")
    @classmethod
    def _check_vector(cls, v):
        if not v:
            raise ValueError("vector must be nonempty")
        if not all(math.isfinite(x) for x in v):
            raise ValueError("vector entries must be finite")
        return v

    @model_validator(mode="after")
    def _check_window(self):
        if self.window is not None and self.window < self.size:
            raise ValueError(f"window {self.window} is smaller than size {self.size}")
        return self

    def effective_window(self) -> int:
        return self.window if self.window is not None else DEFAULT_WINDOW_FACTOR * self.size

    def to_filters(self) -> tuple:
        out = []
        for f in self.filters:
            if f.type == "term":
                out.append(Filter.term(f.field, f.value))
            else:
                out.append(Filter.range(f.field, gte=f.gte, lte=f.lte))
        return tuple(out)


def create_app(indexes) -> FastAPI:
    """Build the service over a mapping of index name -> TokenIndex."""
    registry = dict(indexes)
    app = FastAPI(title="tokvec")

    @app.exception_handler(RequestValidationError)
    async def _malformed_body(request, exc):
        detail = [
            {
                "loc": [str(part) for part in err.get("loc", ())],
                "msg": str(err.get("msg", "")),
                "type": str(err.get("type", "")),
            }
            for err in exc.errors()
        ]
        return JSONResponse(status_code=400, content={"detail": detail})

    def _get_index(name: str) -> TokenIndex:
        index = registry.get(name)
        if index is None:
            raise HTTPException(status_code=404, detail=f"unknown index {name!r}")
        return index

    @app.post("/indexes/{name}/search")
    def search_endpoint(name: str, request: SearchRequestModel):
        index = _get_index(name)
        started = time.perf_counter()
        try:
            query = Query(
                vector=np.asarray(request.vector, dtype=np.float64),
                size=request.size,
                window=request.effective_window(),
                filters=request.to_filters(),
            )
            result = search(index, query)
        except DimensionMismatchError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        except UnknownFilterFieldError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        took_ms = (time.perf_counter() - started) * 1000.0
        return {
            "hits": [
                {
                    "id": hit.id,
                    "distance": hit.distance,
                    "overlap_score": hit.overlap_score,
                    # Flat field -> value form; string and numeric names are
                    # disjoint, so nothing collides.
                    "metadata": {
                        **hit.metadata.string_fields,
                        **hit.metadata.numeric_fields,
                    },
                }
                for hit in result.hits
            ],
            "exhausted": result.exhausted,
            "took_ms": took_ms,
        }

    @app.get("/indexes/{name}/stats")
    def stats_endpoint(name: str):
        return _get_index(name).stats()

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    return app


_UVICORN_LEVELS = {"critical", "error", "warning", "info", "debug", "trace"}


def serve(index_dirs, host: str = "127.0.0.1", port: int = 8080) -> None:
    """Open snapshots and run the service until interrupted.

    index_dirs maps index names to snapshot directories. The log level
    follows the TOKVEC_LOG environment variable when set.
    """
    import uvicorn

    indexes = {}
    for name, directory in index_dirs.items():
        indexes[name] = open_snapshot(directory)
        logger.info("mounted index %r from %s", name, directory)
    app = create_app(indexes)
    level = os.environ.get("TOKVEC_LOG", "info").lower()
    if level not in _UVICORN_LEVELS:
        level = "info"
    uvicorn.run(app, host=host, port=port, log_level=level)
