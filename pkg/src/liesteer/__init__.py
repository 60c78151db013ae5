"""Controllability certification and two-valued control synthesis for
pure-point-spectrum quantum systems.

Core package layout:

- ``model``: system ingestion, Galerkin compressions, bilinear reduction
- ``spectral``: gap tables, selections, decoupled-gap certificates
- ``lie``: generated algebras, rank certificates, resonance chains
- ``sim``: exact piecewise-constant propagators and the interaction frame
- ``bangbang``: two-valued conversion and its convergence harness
- ``synth``: word planning, pulse generation, projection matching
- ``service``: FastAPI wrapper; ``cli``: thin file-driven client

Units are dimensionless (hbar = 1); level indices are 1-based throughout
the file formats.
"""

from .model import (
    GalerkinPair,
    SystemModel,
    bilinear_reduction,
    builtin_family,
    load_system,
    system_from_document,
    truncate,
)
from .spectral import GapSelection, GapTable, decoupling_check, gap_table, select, xi_set
from .lie import (
    AlgebraBasis,
    Chain,
    bracket,
    build_mn,
    build_vn,
    build_wn,
    chain_check,
    contains_su,
    generated_algebra,
    lie_galerkin_search,
    vn_equivalence_check,
)
from .sim import (
    PiecewiseConstantControl,
    StateVector,
    ValueRange,
    basis_state,
    interaction_derivative_check,
    interaction_propagator,
    propagate,
    propagator_matrix,
    tail_scan,
    theta,
    unitarity_defect,
)
from .bangbang import bangbangify, convergence_run, primitive_error
from .synth import (
    ControlPlan,
    SynthParams,
    WordFactor,
    plan_word,
    project_match,
    pulse_for_factor,
    recurrence_wait,
    verify_plan,
    word_product,
)

__version__ = "0.1.0"
