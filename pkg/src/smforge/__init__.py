"""smforge: turn natural-language system descriptions into UML state
machines by orchestrating an LLM through four generation strategies, then
score the results component by component against ground truth."""

__version__ = "0.1.0"
