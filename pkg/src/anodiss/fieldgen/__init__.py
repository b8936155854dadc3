"""Velocity field construction: patches, blocks, rectangle tree, analytic and mollified fields."""

from .analytic import AnalyticField, build_bq
from .block import BranchingBlock, branching_block
from .patches import StraightPatch, TurnPatch, rotating_pipe, turn_transit_time
from .tree import PipeTree, RectFrame
