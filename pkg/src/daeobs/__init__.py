"""Observers for nonlinear differential-algebraic systems.

Pencil analysis through Wong sequences, subspace-restricted matrix inequality
certificates, gain synthesis by alternating projections, and simulation of
plant and observer through the index-one reduction.
"""

from .model import DaeSystem, ObserverGains, build_augmented, necessary_rank_check
from .pencil import MatrixPencil, is_regular, pencil_index, qwf_transform, wong_limits
from .subspace import Subspace
from .synth import (CertificateReport, LmiCertificate, SamplingPlan, check_thm1, check_thm2,
                    check_thm3)

__version__ = "0.1.0"

__all__ = [
    "DaeSystem", "ObserverGains", "build_augmented", "necessary_rank_check",
    "MatrixPencil", "is_regular", "pencil_index", "qwf_transform", "wong_limits",
    "Subspace", "CertificateReport", "LmiCertificate", "SamplingPlan",
    "check_thm1", "check_thm2", "check_thm3",
]
