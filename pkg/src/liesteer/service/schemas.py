"""Pydantic request/response models; field layouts mirror the JSON file formats."""

from __future__ import annotations

from typing import Optional, Union

from pydantic import BaseModel, Field


class RuleSpec(BaseModel):
    rule: str


class TailSpec(BaseModel):
    monotone_from: int


class PolarizabilitySpec(BaseModel):
    w1: list[list[float]]
    w2: list[list[float]]


class SystemDocument(BaseModel):
    """System description, 1-based level indices."""

    eigenvalues: Union[list[float], RuleSpec]
    coupling: list[list[float]] = Field(default_factory=list)
    polarizability: Optional[PolarizabilitySpec] = None
    tail: Optional[TailSpec] = None

    def to_plain(self) -> dict:
        doc: dict = {}
        if isinstance(self.eigenvalues, RuleSpec):
            doc["eigenvalues"] = {"rule": self.eigenvalues.rule}
        else:
            doc["eigenvalues"] = self.eigenvalues
        doc["coupling"] = self.coupling
        if self.polarizability is not None:
            doc["polarizability"] = {"w1": self.polarizability.w1, "w2": self.polarizability.w2}
        if self.tail is not None:
            doc["tail"] = {"monotone_from": self.tail.monotone_from}
        return doc


class TwoValueSpec(BaseModel):
    two_value: float


class ControlDocument(BaseModel):
    segments: list[list[float]]
    range: Union[list[float], TwoValueSpec]

    def to_plain(self) -> dict:
        rng = self.range if isinstance(self.range, list) else {"two_value": self.range.two_value}
        return {"segments": self.segments, "range": rng}


class StateDocument(BaseModel):
    cutoff: int
    coefficients: list[list[float]]

    def to_plain(self) -> dict:
        return {"cutoff": self.cutoff, "coefficients": self.coefficients}


class CertifyRequest(BaseModel):
    system: SystemDocument
    n0: int
    nmax: int


class CertifyResponse(BaseModel):
    certified: bool
    n: Optional[int] = None
    certificate: dict


class ChainRequest(BaseModel):
    system: SystemDocument
    levels: int


class ChainResponse(BaseModel):
    connected: bool
    nonresonant: bool = False
    degeneracy_hypothesis_ok: bool = False
    report: dict


class SimulateRequest(BaseModel):
    system: SystemDocument
    control: ControlDocument
    state: StateDocument
    cutoff: int
    two_value: bool = False


class SimulateResponse(BaseModel):
    state: StateDocument
    input_norm: float
    output_norm: float
    total_time: float


class BangbangRequest(BaseModel):
    control: ControlDocument
    a: float
    k: int
    report: bool = False


class BangbangResponse(BaseModel):
    control: ControlDocument
    primitive_error: float
    primitive_bound: float
    max_interval_mass_defect: float
    l1_input: float
    l1_output: float


class SynthesizeRequest(BaseModel):
    system: SystemDocument
    psi0: StateDocument
    psi1: StateDocument
    N: int
    tol: float
    seed: int = 0
    budget: int = 600
    delta: float = 0.2
    cutoff: Optional[int] = None


class SynthesizeResponse(BaseModel):
    success: bool
    plan: dict


class VerifyPlanRequest(BaseModel):
    system: SystemDocument
    plan: dict
    cutoffs: list[int]


class VerifyPlanResponse(BaseModel):
    report: dict
