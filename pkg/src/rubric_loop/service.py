"""Review service consumed by the browser workbench.

Read endpoints expose experiments, reliability rounds, loop iterations, and
misclassified instances with their raw generations; mutation endpoints accept
consensus records, error tags, candidate decisions, and loop transitions.
Every mutation is also available as a CLI command (the parity contract), is
validated by the owning module, and carries optimistic concurrency: clients
send the record digest they last saw and stale digests are rejected.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import workflow
from .active_learning import ErrorTag, TagDirection
from .errors import (
    GatewayError,
    GateFailedError,
    LockConflictError,
    ParseError,
    RubricLoopError,
    StaleDigestError,
)
from .irr import ConsensusRecord
from .storage import list_experiments

API_PREFIX = "/api/v1"


class ConsensusIn(BaseModel):
    response_id: str
    subscore: str
    resolved_value: int
    rationale: str
    resolved_by: list[str] = Field(default_factory=list)


class ConsensusBatchIn(BaseModel):
    base_digest: str
    records: list[ConsensusIn]


class AdvanceIrrIn(BaseModel):
    base_digest: str
    reasoning_drafts: dict[str, dict[str, str]] = Field(default_factory=dict)


class TagIn(BaseModel):
    pattern_id: str
    description: str = ""
    instance_ids: list[str]
    subscore: str
    direction: str


class TagBatchIn(BaseModel):
    base_digest: str
    tags: list[TagIn]


class AcceptIn(BaseModel):
    base_digest: str
    accepted: list[dict[str, Any]]  # {response_id, reasoning: {subscore: text}}


class MutateIn(BaseModel):
    base_digest: str


def _error_body(module: str, code: str, message: str) -> dict[str, Any]:
    return {"error": {"module": module, "code": code, "message": message}}


def create_app(home: str | Path) -> FastAPI:
    app = FastAPI(title="rubric-loop review service", version="1")
    home = Path(home)

    @app.exception_handler(RubricLoopError)
    async def handle_domain_error(request: Request, exc: RubricLoopError):
        status = 422
        code = "validation"
        if isinstance(exc, StaleDigestError):
            status, code = 409, "stale_digest"
        elif isinstance(exc, LockConflictError):
            status, code = 423, "lock_conflict"
        elif isinstance(exc, GateFailedError):
            status, code = 409, "gate_failed"
        elif isinstance(exc, ParseError):
            status, code = 422, exc.code
        elif isinstance(exc, GatewayError):
            status, code = 502, "gateway"
        return JSONResponse(status_code=status, content=_error_body("rubric_loop", code, str(exc)))

    def ctx_for(experiment_id: str) -> workflow.ExperimentContext:
        return workflow.open_experiment(home, experiment_id)

    def irr_digest(ctx) -> str | None:
        found = ctx.store.latest("irr")
        return found[0] if found else None

    def al_digest(ctx) -> str | None:
        found = workflow.al_record(ctx)
        return found[0] if found else None

    def require_fresh(current: str | None, base: str) -> None:
        if current != base:
            raise StaleDigestError(
                f"state moved on: current digest {current}, request based on {base}"
            )

    # -- reads ---------------------------------------------------------------

    @app.get(f"{API_PREFIX}/experiments")
    def get_experiments():
        return {"experiments": list_experiments(home)}

    @app.get(f"{API_PREFIX}/experiments/{{eid}}")
    def get_experiment(eid: str):
        ctx = ctx_for(eid)
        return {
            "id": eid,
            "question_id": ctx.rubric.question_id,
            "rubric": ctx.rubric.to_dict(),
            "n_responses": len(ctx.dataset.responses),
            "manifest": [{"kind": k, "digest": d} for k, d in ctx.store.manifest()],
        }

    @app.get(f"{API_PREFIX}/experiments/{{eid}}/irr/rounds")
    def get_irr_rounds(eid: str):
        ctx = ctx_for(eid)
        rounds = [
            {"digest": digest, **doc["payload"]}
            for digest, doc in ctx.store.list_records("irr")
            if doc["meta"].get("type") == "round"
        ]
        return {"rounds": rounds, "digest": irr_digest(ctx)}

    @app.get(f"{API_PREFIX}/experiments/{{eid}}/irr/disagreements")
    def get_disagreements(eid: str):
        ctx = ctx_for(eid)
        round_digest, round_ = workflow.current_irr_round(ctx)
        consensus = workflow.consensus_records(ctx, round_digest)
        resolved = {(c.response_id, c.subscore): c.to_dict() for c in consensus}
        responses = ctx.dataset.response_by_id()
        criteria = {s.name: s.criteria for s in ctx.rubric.subscores}
        items = []
        for d in round_.disagreements:
            items.append(
                {
                    **d.to_dict(),
                    "response_text": responses[d.response_id].text,
                    "criteria": criteria.get(d.subscore, ""),
                    "consensus": resolved.get((d.response_id, d.subscore)),
                }
            )
        return {
            "round_digest": round_digest,
            "round_index": round_.round_index,
            "kappa_by_subscore": round_.kappa_by_subscore,
            "passed": round_.passed,
            "items": items,
            "all_resolved": all(item["consensus"] is not None for item in items),
            "digest": irr_digest(ctx),
        }

    @app.get(f"{API_PREFIX}/experiments/{{eid}}/al/state")
    def get_al_state(eid: str):
        ctx = ctx_for(eid)
        digest, state = workflow.current_al_state(ctx)
        return {
            "digest": digest,
            "state": state.to_dict(),
            "validation_ratio": state.validation_ratio(),
        }

    @app.get(f"{API_PREFIX}/experiments/{{eid}}/al/iterations")
    def get_iterations(eid: str):
        ctx = ctx_for(eid)
        digest, state = workflow.current_al_state(ctx)
        return {
            "digest": digest,
            "iterations": [it.to_dict() for it in state.iterations],
            "error_counts": [it.error_count for it in state.iterations],
        }

    @app.get(f"{API_PREFIX}/experiments/{{eid}}/al/misclassified")
    def get_misclassified(eid: str):
        ctx = ctx_for(eid)
        digest, state = workflow.current_al_state(ctx)
        if not state.iterations:
            return {"digest": digest, "items": [], "trends": []}
        last = state.iterations[-1]
        _, run = workflow.find_run(ctx, last.run_digest)
        responses = ctx.dataset.response_by_id()
        gold = ctx.dataset.gold_by_id()
        from .active_learning import trend_summary

        trends = [
            {
                "subscore": t.subscore,
                "fp_count": t.fp_count,
                "fn_count": t.fn_count,
                "direction": t.direction.value,
            }
            for t in trend_summary(last, ctx.rubric)
        ]
        items = []
        for rid in sorted(last.misclassified_ids):
            parsed = run.results.get(rid)
            items.append(
                {
                    "response_id": rid,
                    "response_text": responses[rid].text,
                    "gold": gold[rid].to_dict(),
                    "parsed": parsed.to_dict() if parsed else None,
                    "raw_generation": parsed.raw.raw_text if parsed and parsed.raw else None,
                    "errors": [
                        m.to_dict() for m in last.misclassified if m.response_id == rid
                    ],
                }
            )
        return {"digest": digest, "iteration": last.index, "items": items, "trends": trends}

    @app.get(f"{API_PREFIX}/experiments/{{eid}}/al/candidates")
    def get_candidates(eid: str):
        ctx = ctx_for(eid)
        digest, state = workflow.current_al_state(ctx)
        return {
            "digest": digest,
            "candidates": [c.to_dict() for c in state.pending_candidates],
            "balance": workflow.balance_overview(ctx),
        }

    @app.get(f"{API_PREFIX}/experiments/{{eid}}/al/status")
    def get_status(eid: str):
        ctx = ctx_for(eid)
        decision = workflow.do_al_status(ctx)
        return {"digest": al_digest(ctx), "decision": decision.to_dict()}

    @app.get(f"{API_PREFIX}/experiments/{{eid}}/report")
    def get_report(eid: str):
        ctx = ctx_for(eid)
        entries = [
            {"meta": meta, "report": report.to_dict()} for meta, report in workflow.evaluations(ctx)
        ]
        return {"evaluations": entries, "text": workflow.do_report(ctx) if entries else ""}

    # -- mutations -------------------------------------------------------------

    @app.post(f"{API_PREFIX}/experiments/{{eid}}/irr/consensus")
    def post_consensus(eid: str, body: ConsensusBatchIn):
        ctx = ctx_for(eid)
        require_fresh(irr_digest(ctx), body.base_digest)
        records = [
            ConsensusRecord(
                response_id=r.response_id,
                subscore=r.subscore,
                resolved_value=r.resolved_value,
                rationale=r.rationale,
                resolved_by=tuple(r.resolved_by),
            )
            for r in body.records
        ]
        digest, count = workflow.do_irr_consensus(ctx, records)
        return {"digest": digest, "recorded": count}

    @app.post(f"{API_PREFIX}/experiments/{{eid}}/irr/advance")
    def post_irr_advance(eid: str, body: AdvanceIrrIn):
        ctx = ctx_for(eid)
        require_fresh(irr_digest(ctx), body.base_digest)
        digest, exemplars = workflow.do_irr_exemplars(ctx, body.reasoning_drafts)
        return {"digest": digest, "emitted": len(exemplars)}

    @app.post(f"{API_PREFIX}/experiments/{{eid}}/al/run")
    def post_al_run(eid: str, body: MutateIn):
        ctx = ctx_for(eid)
        require_fresh(al_digest(ctx), body.base_digest)
        digest, state = workflow.do_al_run(ctx)
        return {"digest": digest, "iteration": state.iterations[-1].to_dict()}

    @app.post(f"{API_PREFIX}/experiments/{{eid}}/al/tags")
    def post_tags(eid: str, body: TagBatchIn):
        ctx = ctx_for(eid)
        require_fresh(al_digest(ctx), body.base_digest)
        tags = [
            ErrorTag(
                pattern_id=t.pattern_id,
                description=t.description,
                instance_ids=tuple(t.instance_ids),
                subscore=t.subscore,
                direction=TagDirection(t.direction),
            )
            for t in body.tags
        ]
        workflow.do_al_tag(ctx, tags)
        digest, state, result = workflow.do_al_candidates(ctx)
        return {"digest": digest, "selection": result.to_dict()}

    @app.post(f"{API_PREFIX}/experiments/{{eid}}/al/accept")
    def post_accept(eid: str, body: AcceptIn):
        ctx = ctx_for(eid)
        require_fresh(al_digest(ctx), body.base_digest)
        accepted = [(a["response_id"], a.get("reasoning", {})) for a in body.accepted]
        digest, state = workflow.do_al_accept(ctx, accepted)
        return {
            "digest": digest,
            "shots": len(state.exemplars),
            "pool": len(state.pool_ids),
        }

    @app.post(f"{API_PREFIX}/experiments/{{eid}}/al/revert")
    def post_revert(eid: str, body: MutateIn):
        ctx = ctx_for(eid)
        require_fresh(al_digest(ctx), body.base_digest)
        digest, state, decision = workflow.do_al_revert(ctx)
        return {"digest": digest, "reverted_to": decision.revert_to}

    return app
