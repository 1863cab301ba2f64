"""School-mapping funnel: cleansing, expectation modelling, tile scoring, review service."""

__version__ = "0.1.0"
