"""Multiscale flatness diagnostics and smooth parametrization of point clouds."""

from .cloud import PointCloud
from .geometry import Ball, Plane, plane_angle, plane_dist, project, normal_project
from .nets import MultiscaleNet, build_net, in_V
from .fitting import fit_plane
from .beta import beta, beta_compare, epsilon_k, gamma_k, jones, upper_density
from .ccbp import CCBP, assemble, check_one_sided_flat, lower_regularity, validate
from .partition import PartitionJet, bump_jet, partition_jet
from .parametrization import FlowJet, SigmaJet, flow, invert, sigma_jet, surface_mesh
from .generators import (
    CantorSpec,
    HaarGraphSpec,
    SnowflakeSpec,
    cantor_c1s,
    graph_fixtures,
    haar_graph,
    punch_holes,
    snowflake,
)
from .diagnostics import (
    HolderLimitCase,
    RegularityReport,
    estimate_holder,
    holder_limit_check,
    predict_and_verify,
)

__version__ = "0.1.0"
