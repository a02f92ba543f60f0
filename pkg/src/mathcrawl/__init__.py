"""mathcrawl: curation pipeline for math-focused multimodal web corpora."""

from .records import CrawlRecord, InterleavedDoc, plain_text

__version__ = "0.1.0"

__all__ = ["CrawlRecord", "InterleavedDoc", "plain_text", "__version__"]
