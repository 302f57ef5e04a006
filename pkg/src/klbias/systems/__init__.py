"""Physical models: potentials, gradients and reaction coordinates."""

from .base import AlchemicalSystem, RCEval, ReactionCoordinateSystem
from .geometry import fcc_octahedral_cluster, hexagonal_cluster, mackay_icosahedron
from .lj import LJClusterSystem, q4_from_bonds
from .snapshot import read_snapshot, write_snapshot
from .spring import SpringExtendedSystem
from .toy import ToySystem, toy_analytic_free_energy
from .wca import WCADimerSystem, dimer_double_well, wca_pair

__all__ = [
    "AlchemicalSystem",
    "ReactionCoordinateSystem",
    "RCEval",
    "ToySystem",
    "toy_analytic_free_energy",
    "WCADimerSystem",
    "wca_pair",
    "dimer_double_well",
    "LJClusterSystem",
    "q4_from_bonds",
    "SpringExtendedSystem",
    "fcc_octahedral_cluster",
    "mackay_icosahedron",
    "hexagonal_cluster",
    "read_snapshot",
    "write_snapshot",
]
