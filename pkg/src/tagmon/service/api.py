"""Read-only HTTP query interface over a running (or finished) engine."""

from __future__ import annotations

from typing import Optional

from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import JSONResponse

from ..protocols import ProtocolId, valid_message_type
from .engine import Engine

API_VERSION = 1
MAX_PAGE = 10000


def _range(frm: Optional[float], to: Optional[float]):
    lo = float("-inf") if frm is None else frm
    hi = float("inf") if to is None else to
    if lo > hi:
        raise HTTPException(400, detail=f"'from' ({frm}) is after 'to' ({to})")
    return lo, hi


def create_app(engine: Engine) -> FastAPI:
    app = FastAPI(title="tagmon engine", version=str(API_VERSION))

    @app.get("/records")
    def records(src: Optional[str] = None, dst: Optional[str] = None,
                protocol: Optional[str] = None, msg_type: Optional[str] = None,
                frm: Optional[float] = Query(None, alias="from"),
                to: Optional[float] = None,
                offset: int = Query(0, ge=0), limit: int = Query(100, ge=1, le=MAX_PAGE)):
        proto = None
        if protocol is not None:
            try:
                proto = ProtocolId(protocol.upper())
            except ValueError:
                raise HTTPException(400, detail=f"unknown protocol {protocol!r}") from None
        if msg_type is not None and proto is not None and not valid_message_type(proto, msg_type):
            raise HTTPException(400, detail=f"{msg_type!r} is not a {proto.value} message type")
        lo, hi = _range(frm, to)
        g = engine.graph
        with engine.lock:
            items = list(engine.records)
        out = []
        for r in items:
            if proto is not None and r.protocol is not proto:
                continue
            if msg_type is not None and r.msg_type != msg_type:
                continue
            if src is not None and src not in (r.source, g.node_id(r.source)):
                continue
            if dst is not None and dst not in (r.destination, g.node_id(r.destination)):
                continue
            if not lo <= r.timestamp <= hi:
                continue
            out.append(r)
        page = out[offset:offset + limit]
        return {"version": API_VERSION, "total": len(out), "offset": offset, "limit": limit,
                "items": [r.to_dict() for r in page]}

    @app.get("/tags")
    def tags():
        with engine.lock:
            return {"version": API_VERSION,
                    "tags": [{"id": t, "count": len(s),
                              "kind": "raw" if t in engine.store.rule_of else "computed",
                              "description": engine.cfg.descriptions.get(t, "")}
                             for t, s in engine.store.series.items()]}

    @app.get("/tags/{tag_id}")
    def tag_series(tag_id: str, frm: Optional[float] = Query(None, alias="from"),
                   to: Optional[float] = None):
        lo, hi = _range(frm, to)
        with engine.lock:
            if tag_id not in engine.store.series:
                raise HTTPException(404, detail=f"unknown tag {tag_id!r}")
            obs = engine.store.query_series(tag_id, lo, hi)
            return {"version": API_VERSION, "tag": tag_id, "count": len(obs),
                    "observations": [o.to_dict() for o in obs]}

    @app.get("/anomalies")
    def anomalies(cond: Optional[str] = None, group: Optional[str] = None,
                  frm: Optional[float] = Query(None, alias="from"), to: Optional[float] = None,
                  offset: int = Query(0, ge=0), limit: int = Query(1000, ge=1, le=MAX_PAGE)):
        lo, hi = _range(frm, to)
        known = {c.cond_id for c in engine.cfg.conditions}
        if cond is not None and cond not in known:
            raise HTTPException(404, detail=f"unknown condition {cond!r}")
        with engine.lock:
            evs = [e for e in engine.events
                   if (cond is None or e.cond_id == cond) and (group is None or e.group == group)
                   and lo <= e.t <= hi]
        return {"version": API_VERSION, "total": len(evs), "offset": offset, "limit": limit,
                "items": [e.to_dict() for e in evs[offset:offset + limit]]}

    @app.get("/graph")
    def graph():
        return {"version": API_VERSION, **engine.snapshot()}

    @app.get("/stats")
    def stats():
        return {"version": API_VERSION, **engine.stats()}

    @app.exception_handler(ValueError)
    def _bad_value(request, exc):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    return app


def serve(engine: Engine, host: str, port: int):
    """Run the API in a daemon thread; returns the uvicorn server object."""
    import threading

    import uvicorn

    server = uvicorn.Server(uvicorn.Config(create_app(engine), host=host, port=port,
                                           log_level="warning"))
    th = threading.Thread(target=server.run, name="api", daemon=True)
    th.start()
    return server
