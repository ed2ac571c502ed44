"""cxrsum: multimodal report generation/summarization on a synthetic corpus."""

__version__ = "0.1.0"
