"""Samplers, audits, and limit constructions for exchangeable random structures."""

from .seeds import SeedKey, XiFamily
from .logic import (
    FiniteStructure,
    Permutation,
    Signature,
    TypeFingerprint,
    qf_fingerprint,
)
from .engine import (
    AhkSampler,
    coherence_check,
    dissociation_test,
    estimate_measure,
    estimate_positive_types,
    invariance_test,
    sample,
)
from .morley import (
    MorleyResult,
    canonical_expand,
    morleyize,
    parse_fragment,
    reduct,
    verify_reduct_roundtrip,
)
from .limits import (
    LimitHandle,
    SeparationError,
    Weight,
    build_limit,
    build_theory,
    handle_from_manifest,
    manifest_json,
    rescale,
    sample_point,
    sample_structure,
    weight_preset,
)
from .stats import RootReport, collision_stat, find_roots, rootedness_check

__all__ = [
    "SeedKey",
    "XiFamily",
    "Signature",
    "FiniteStructure",
    "Permutation",
    "TypeFingerprint",
    "qf_fingerprint",
    "AhkSampler",
    "sample",
    "estimate_measure",
    "dissociation_test",
    "invariance_test",
    "coherence_check",
    "estimate_positive_types",
    "MorleyResult",
    "morleyize",
    "parse_fragment",
    "canonical_expand",
    "reduct",
    "verify_reduct_roundtrip",
    "LimitHandle",
    "SeparationError",
    "Weight",
    "build_limit",
    "build_theory",
    "sample_point",
    "sample_structure",
    "rescale",
    "weight_preset",
    "manifest_json",
    "handle_from_manifest",
    "RootReport",
    "find_roots",
    "rootedness_check",
    "collision_stat",
]

__version__ = "0.1.0"
