"""Hellinger-Kantorovich distances, geodesics, Hopf-Lax flows and convexity
certification for measures on R^d."""

__version__ = "0.1.0"

from .cone_geometry import (
    ConePoint,
    DilationTransportPair,
    cone_distance,
    cone_geodesic,
    dilation_transport_apply,
    homogeneous_projection,
    monge_cost,
)
from .convexity import (
    DensityFunction,
    bbB_matrix,
    boltzmann,
    capped_linear,
    certify,
    empirical_geodesic_convexity,
    lambda_opt,
    negative_power,
    power,
    sum_of,
    tabulated,
)
from .dual_potentials import (
    PotentialPair,
    backward_L_transform,
    check_tightness,
    forward_L_transform,
    monge_map_from_potential,
    potentials_from_plan,
)
from .errors import HKError, InputError, NumericalError
from .geodesics import FlowContext, GeodesicCurve, build_geodesic, sample
from .hopf_lax import (
    GridFunction,
    PointPotential,
    SmoothPotentialFlow,
    characteristic_flow,
    contact_set,
    hopf_lax_backward,
    hopf_lax_forward,
)
from .let_solver import SolverOptions, brute_force_let, hk_distance, hk_squared, solve_let
from .measures import DiscreteMeasure, GridDensity

__all__ = [name for name in dir() if not name.startswith("_")]
