"""HTTP session service for interactive demonstration collection.

Each session wraps one simulator episode: a scene, a goal, and an
event log.  Teachers step the simulator one symbolic action at a time,
watch the effects, and export the applied sequence as a demo-v1
record.  A websocket endpoint streams closed-loop policy rollouts from
a checkpoint.  All payloads carry schema tag "api-v1".
"""

from __future__ import annotations

import itertools
import json
import threading
import uuid
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect
from fastapi.responses import HTMLResponse
from pydantic import BaseModel

from . import domain, sim
from .corpus import DETERMINISTIC, Demonstration
from .policy import ToolPolicy
from .sim import ARITY, INTERACTION_TOKENS, SimConfig
from .world import (
    Action,
    Goal,
    WorldState,
    action_from_dict,
    action_to_dict,
    goal_satisfied,
    goal_to_dict,
    state_to_dict,
)

API_SCHEMA = "api-v1"
SCENES = ("micro-home",)


@dataclass
class SessionEvent:
    action: Action
    outcome: str
    violation: str = ""


@dataclass
class Session:
    id: str
    scene_name: str
    scene_seed: int
    goal_name: str
    teacher: str
    initial: WorldState
    state: WorldState
    goal: Goal
    cfg: SimConfig
    events: list = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)
    rng: np.random.Generator = field(
        default_factory=lambda: np.random.default_rng(0)
    )


class CreateSessionRequest(BaseModel):
    scene: str = "micro-home"
    scene_seed: int = 0
    goal: str
    teacher: str = "anonymous"
    stochastic: bool = False


class StepRequest(BaseModel):
    action: dict


class ExportRequest(BaseModel):
    allow_partial: bool = False


def legal_actions(state: WorldState, cfg: SimConfig) -> list:
    """Every grammar-valid action applicable in this state."""
    ids = state.object_ids()
    out = []
    for interaction in INTERACTION_TOKENS:
        arity = ARITY[interaction]
        if arity == 1:
            candidates = ((o,) for o in ids)
        else:
            candidates = itertools.product(ids, ids)
        for args in candidates:
            action = Action(interaction, *args)
            ok, _ = sim.applicable(state, action, cfg)
            if ok:
                out.append(action_to_dict(action))
    return out


def snapshot(session: Session) -> dict:
    return {
        "schema": API_SCHEMA,
        "session_id": session.id,
        "scene": session.scene_name,
        "goal_name": session.goal_name,
        "goal": goal_to_dict(session.goal),
        "state": state_to_dict(session.state),
        "goal_satisfied": goal_satisfied(session.state, session.goal),
        "legal_actions": legal_actions(session.state, session.cfg),
        "step_count": sum(1 for e in session.events if e.outcome != "rejected"),
        "grammar": dict(ARITY),
    }


def make_app(checkpoint_dir: Optional[str] = None) -> FastAPI:
    app = FastAPI(title="toolplan session service")
    sessions: dict = {}

    def get_session(session_id: str) -> Session:
        session = sessions.get(session_id)
        if session is None:
            raise HTTPException(404, f"unknown session {session_id!r}")
        return session

    @app.get("/catalog")
    def catalog():
        return {
            "schema": API_SCHEMA,
            "scenes": list(SCENES),
            "goals": sorted(domain.GOALS),
            "grammar": dict(ARITY),
        }

    @app.post("/sessions")
    def create_session(req: CreateSessionRequest):
        if req.scene not in SCENES:
            raise HTTPException(
                404, f"unknown scene {req.scene!r}; available: {list(SCENES)}"
            )
        if req.goal not in domain.GOALS:
            raise HTTPException(
                404,
                f"unknown goal {req.goal!r}; available: {sorted(domain.GOALS)}",
            )
        scene = domain.scene_for_goal(req.goal, seed=req.scene_seed)
        cfg = SimConfig(seed=req.scene_seed) if req.stochastic else DETERMINISTIC
        session = Session(
            id=uuid.uuid4().hex[:12],
            scene_name=req.scene,
            scene_seed=req.scene_seed,
            goal_name=req.goal,
            teacher=req.teacher,
            initial=scene,
            state=scene,
            goal=domain.make_goal(req.goal),
            cfg=cfg,
            rng=np.random.default_rng(req.scene_seed),
        )
        sessions[session.id] = session
        return snapshot(session)

    @app.get("/sessions/{session_id}/state")
    def get_state(session_id: str):
        return snapshot(get_session(session_id))

    @app.post("/sessions/{session_id}/step")
    def step(session_id: str, req: StepRequest):
        session = get_session(session_id)
        try:
            action = action_from_dict(req.action)
            if action.interaction not in ARITY:
                raise ValueError(f"unknown interaction {action.interaction!r}")
        except Exception as exc:
            raise HTTPException(
                422, {"error": str(exc), "grammar": dict(ARITY)}
            )
        with session.lock:
            state, event = sim.apply(
                session.state, action, session.cfg, session.rng
            )
            session.state = state
            session.events.append(
                SessionEvent(action, event.outcome, event.note)
            )
            snap = snapshot(session)
        return {
            "schema": API_SCHEMA,
            "event": {
                "action": action_to_dict(action),
                "outcome": event.outcome,
                "violation": event.note,
            },
            "snapshot": snap,
            "goal_satisfied": snap["goal_satisfied"],
        }

    @app.post("/sessions/{session_id}/export")
    def export(session_id: str, req: ExportRequest = ExportRequest()):
        session = get_session(session_id)
        with session.lock:
            done = goal_satisfied(session.state, session.goal)
            if not done and not req.allow_partial:
                raise HTTPException(
                    409, "goal not reached; pass allow_partial to export anyway"
                )
            # rebuild the applied-step trajectory by replay: rejected and
            # failed attempts are excluded from the export
            state = session.initial
            steps = []
            rng = np.random.default_rng(0)
            for ev in session.events:
                if ev.outcome == "rejected":
                    continue
                steps.append((state, ev.action))
                state, _ = sim.apply(state, ev.action, DETERMINISTIC, rng)
            demo = Demonstration(
                scene_id=f"{session.scene_name}-{session.scene_seed}",
                goal_name=session.goal_name,
                initial=session.initial,
                goal=session.goal,
                steps=steps,
                teacher=session.teacher,
            )
        return {"schema": API_SCHEMA, "demo": demo.to_dict(), "complete": done}

    @app.websocket("/sessions/{session_id}/rollout")
    async def rollout(websocket: WebSocket, session_id: str, checkpoint: str):
        await websocket.accept()
        session = sessions.get(session_id)
        if session is None:
            await websocket.send_json(
                {"schema": API_SCHEMA, "error": f"unknown session {session_id!r}"}
            )
            await websocket.close()
            return
        try:
            policy = ToolPolicy.load(checkpoint)
        except Exception as exc:
            await websocket.send_json(
                {"schema": API_SCHEMA, "error": f"checkpoint load failed: {exc}"}
            )
            await websocket.close()
            return
        steps = 0
        try:
            with session.lock:
                history = [
                    e.action for e in session.events if e.outcome != "rejected"
                ]
                while steps < session.cfg.max_steps:
                    if goal_satisfied(session.state, session.goal):
                        break
                    action = policy.predict(
                        session.state, session.goal, history
                    )
                    state, event = sim.apply(
                        session.state, action, session.cfg, session.rng
                    )
                    session.state = state
                    session.events.append(
                        SessionEvent(action, event.outcome, event.note)
                    )
                    history.append(action)
                    steps += 1
                    await websocket.send_json(
                        {
                            "schema": API_SCHEMA,
                            "action": action_to_dict(action),
                            "outcome": event.outcome,
                            "violation": event.note,
                            "snapshot": snapshot(session),
                        }
                    )
                await websocket.send_json(
                    {
                        "schema": API_SCHEMA,
                        "done": True,
                        "success": goal_satisfied(session.state, session.goal),
                        "steps": steps,
                    }
                )
            await websocket.close()
        except WebSocketDisconnect:
            pass  # session state stays at the last applied step

    ui_root = _ui_root()
    if ui_root is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(ui_root), html=True), name="ui")

    @app.get("/", response_class=HTMLResponse)
    def index():
        ui_line = (
            '<p>Browser teaching UI: <a href="/ui/">/ui/</a></p>'
            if ui_root is not None
            else "<p>No UI bundle found (build the frontend to enable /ui).</p>"
        )
        return (
            "<html><body><h3>toolplan session service</h3>"
            f"<p>See /docs for the API. Payload schema: api-v1.</p>{ui_line}"
            "</body></html>"
        )

    return app


def _ui_root():
    """Locate a built frontend bundle; the service runs fine without one."""
    import os
    from pathlib import Path

    override = os.environ.get("TOOLPLAN_UI_DIR")
    candidates = [Path(override)] if override else []
    here = Path(__file__).resolve()
    for base in (here.parents[2], Path.cwd()):
        candidates.append(base / "frontend")
    for cand in candidates:
        if (cand / "index.html").is_file() and (cand / "dist").is_dir():
            return cand
    return None


def main(host: str = "127.0.0.1", port: int = 8750):
    import uvicorn

    uvicorn.run(make_app(), host=host, port=port)


if __name__ == "__main__":
    main()
