"""gridse: decentralized hybrid SCADA/PMU state estimation with bad-data processing."""

from .network import (
    AdmittanceMatrix,
    Branch,
    Bus,
    Gen,
    Load,
    NetworkModel,
    NetworkError,
    Partition,
    PartitionError,
    SchemaError,
    build_admittance,
    load_case,
    load_partition,
    make_partition,
    serialize_partition,
    tile_network,
)
from .powerflow import (
    BranchFlows,
    ConvergenceError,
    OperatingPoint,
    StateVector,
    branch_flows,
    injections,
    solve_power_flow,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
