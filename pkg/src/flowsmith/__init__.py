"""FlowSmith: dialogue-driven generation, execution, and grading of LLM pipeline flows."""

__version__ = "0.1.0"

from .flow_model import (  # noqa: F401
    Edge,
    Flow,
    ModelRef,
    Node,
    NodeCatalog,
    default_catalog,
    deserialize,
    serialize,
    validate,
)
from .templates import TemplateString, parse_template, render_template  # noqa: F401
