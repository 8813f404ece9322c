"""Person re-identification: LOMO features, pose regions, fusion, XQDA and evaluation."""

__version__ = "0.1.0"
