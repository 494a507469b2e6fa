from . import commands
from .pipeline import STAGES, Pipeline, inspection_report, parse_event
