"""FastAPI service exposing certification, simulation, conversion, and synthesis.

Domain-negative outcomes (condition not certified, resonant chain, solver
stall) come back as 200 responses with their flags down; malformed or
out-of-contract inputs map to 422.  All handlers are pure wrappers over the
core package.
"""

from __future__ import annotations

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import bangbang as bb
from .. import lie, spectral, synth
from ..errors import (
    ChainError,
    PlanningError,
    PreconditionError,
    PulseVerificationError,
    SystemValidationError,
    TailUndecidableError,
)
from ..model import system_from_document
from ..sim import PiecewiseConstantControl, StateVector, propagate
from .schemas import (
    BangbangRequest,
    BangbangResponse,
    CertifyRequest,
    CertifyResponse,
    ChainRequest,
    ChainResponse,
    SimulateRequest,
    SimulateResponse,
    StateDocument,
    SynthesizeRequest,
    SynthesizeResponse,
    VerifyPlanRequest,
    VerifyPlanResponse,
)

_USAGE_ERRORS = (
    SystemValidationError,
    TailUndecidableError,
    PreconditionError,
    ValueError,
)


def create_app() -> FastAPI:
    app = FastAPI(title="liesteer", version="0.1.0")

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/certify", response_model=CertifyResponse)
    def certify(req: CertifyRequest):
        try:
            system = system_from_document(req.system.to_plain())
            result = lie.lie_galerkin_search(system, req.n0, req.nmax)
        except _USAGE_ERRORS as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return CertifyResponse(certified=result.certified, n=result.n, certificate=result.to_document())

    @app.post("/chain", response_model=ChainResponse)
    def chain(req: ChainRequest):
        try:
            system = system_from_document(req.system.to_plain())
            result = lie.chain_check(system, req.levels)
        except ChainError as exc:
            return ChainResponse(connected=False, report={"error": str(exc)})
        except _USAGE_ERRORS as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return ChainResponse(
            connected=True,
            nonresonant=result.nonresonant,
            degeneracy_hypothesis_ok=result.degeneracy_ok,
            report=result.to_document(),
        )

    @app.post("/simulate", response_model=SimulateResponse)
    def simulate(req: SimulateRequest):
        try:
            system = system_from_document(req.system.to_plain())
            control = PiecewiseConstantControl.from_json(req.control.to_plain())
            state = StateVector.from_json(req.state.to_plain())
            final = propagate(system, control, req.cutoff, state, two_value=req.two_value)
        except _USAGE_ERRORS as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return SimulateResponse(
            state=StateDocument(**final.to_json()),
            input_norm=state.norm(),
            output_norm=final.norm(),
            total_time=control.total_time,
        )

    @app.post("/bangbang", response_model=BangbangResponse)
    def bangbang(req: BangbangRequest):
        try:
            u = PiecewiseConstantControl.from_json(req.control.to_plain())
            w = bb.bangbangify(u, req.a, req.k)
            prim = bb.primitive_error(u, w)
            mass = float(np.max(bb.interval_mass_defects(u, w, req.k)))
        except _USAGE_ERRORS as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        delta = max(u.value_range.hi, max(v for _d, v in u.segments))
        l1_in = float(sum(d * abs(v) for d, v in u.segments))
        l1_out = float(sum(d * abs(v) for d, v in w.segments))
        return BangbangResponse(
            control=w.to_json(),
            primitive_error=prim,
            primitive_bound=(delta + req.a) * u.total_time / req.k,
            max_interval_mass_defect=mass,
            l1_input=l1_in,
            l1_output=l1_out,
        )

    @app.post("/synthesize", response_model=SynthesizeResponse)
    def synthesize(req: SynthesizeRequest):
        try:
            system = system_from_document(req.system.to_plain())
            psi0 = StateVector.from_json(req.psi0.to_plain())
            psi1 = StateVector.from_json(req.psi1.to_plain())
            params = synth.SynthParams(delta=req.delta)
            plan = synth.project_match(
                system,
                req.N,
                psi0,
                psi1,
                tol=req.tol,
                budget=req.budget,
                seed=req.seed,
                params=params,
                cutoff=req.cutoff,
            )
        except (PlanningError, PulseVerificationError) as exc:
            return SynthesizeResponse(success=False, plan={"error": str(exc)})
        except _USAGE_ERRORS as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return SynthesizeResponse(success=plan.success, plan=plan.to_document())

    @app.post("/verify-plan", response_model=VerifyPlanResponse)
    def verify_plan(req: VerifyPlanRequest):
        try:
            system = system_from_document(req.system.to_plain())
            plan = synth.ControlPlan.from_document(req.plan)
            report = synth.verify_plan(system, plan, req.cutoffs)
        except _USAGE_ERRORS as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return VerifyPlanResponse(report=report)

    return app


app = create_app()
