from .model import DependencyGraph, GraphError, CycleError, Job, JobId
from .power import PowerTable, PowerBoundSet, PowerTableError, PowerBoundError
from .mode import BudgetMode, NodeState, SimMode
from .ilp import Assignment, IlpInstance, InfeasibleError
from .heuristic import DistributeMessage, OnlineGraph, ReportMessage
from .simkernel import SimConfig, SimResult
from .netproto import ControllerServer, MalformedDatagram, ReportManager

__version__ = '0.1.0'


__all__ = [
    'Assignment',
    'BudgetMode',
    'ControllerServer',
    'CycleError',
    'DependencyGraph',
    'DistributeMessage',
    'GraphError',
    'IlpInstance',
    'InfeasibleError',
    'Job',
    'JobId',
    'MalformedDatagram',
    'NodeState',
    'OnlineGraph',
    'PowerBoundError',
    'PowerBoundSet',
    'PowerTable',
    'PowerTableError',
    'ReportManager',
    'ReportMessage',
    'SimConfig',
    'SimMode',
    'SimResult',
]
