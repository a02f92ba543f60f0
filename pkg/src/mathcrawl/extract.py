"""Main-content extraction that keeps equations and image URLs in place.

HTML goes in, an interleaved document comes out: boilerplate subtrees are
pruned by a fixed rule list, block-level text is joined with blank lines,
TeX/MathML sources are serialized inline with ``$``/``$$`` delimiters, and
every retained ``<img>`` becomes an image slot at its reading-order position
with the surrounding text split around it.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Any
from urllib.parse import urljoin, urlsplit

from . import htmldom
from .htmldom import CommentNode, Element, TextNode
from .records import CrawlRecord, InterleavedDoc

# Subtrees that never carry main content. `script` is handled separately so
# math-bearing types survive; head metadata is boilerplate by role.
_PRUNE_TAGS = frozenset(
    "style nav header footer aside form noscript head title meta link".split()
)

# class/id attribute values are split into maximal alphanumeric runs; a
# boilerplate token must match a whole run ("main-nav" hits, "navigation"
# does not).
_BOILER_TOKENS = frozenset({"nav", "menu", "footer", "sidebar", "comment", "breadcrumb"})
_ATTR_TOKEN_RE = re.compile(r"[a-z0-9]+")

# class tokens (whitespace-separated) marking math-bearing img/span nodes;
# a token matches exactly or as a dash-prefixed family ("mwe-math-element").
_MATH_CLASS_TOKENS = ("latex", "math", "mwe-math", "texhtml")

_BLOCK_TAGS = frozenset(
    (
        "#document address article blockquote body caption dd details dialog div dl dt "
        "fieldset figcaption figure h1 h2 h3 h4 h5 h6 hr html li main ol p pre section "
        "summary table tbody td tfoot th thead tr ul"
    ).split()
)

_MIN_BLOCK_CHARS = 10
_WS_RUN_RE = re.compile(r"\s+")


class ExtractError(ValueError):
    """The payload could not be parsed at all (record-level error)."""


@dataclass
class Rejection:
    """A record that produced no content; not an error."""

    id: str
    url: str
    snapshot_id: str
    fetch_time: str
    reason: str

    def to_json_obj(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "url": self.url,
            "snapshot": self.snapshot_id,
            "timestamp": self.fetch_time,
            "rejected": True,
            "reason": self.reason,
        }


def _attr_tokens(el: Element) -> set[str]:
    tokens: set[str] = set()
    for attr in ("class", "id"):
        value = el.get(attr)
        if value:
            tokens.update(_ATTR_TOKEN_RE.findall(value.lower()))
    return tokens


def _is_pruned(el: Element) -> bool:
    if el.tag in _PRUNE_TAGS:
        return True
    if el.tag == "script" and not _is_math_script(el):
        return True
    return bool(_attr_tokens(el) & _BOILER_TOKENS)


def _is_math_script(el: Element) -> bool:
    kind = el.get("type").lower()
    return "math/tex" in kind or "math/asciimath" in kind


def _has_math_class(el: Element) -> bool:
    for token in el.get("class").lower().split():
        for name in _MATH_CLASS_TOKENS:
            if token == name or token.startswith(name + "-"):
                return True
    return False


def _math_source_attr(el: Element) -> str:
    return (el.get("data-latex") or el.get("alt")).strip()


def is_math_node(el: Element) -> bool:
    """True when ``serialize_math`` knows how to render this element."""
    if el.tag == "script":
        return _is_math_script(el)
    if el.tag == "math":
        return True
    if el.tag in ("img", "span"):
        return _has_math_class(el) and bool(_math_source_attr(el))
    return False


def serialize_math(el: Element) -> str:
    """Render a math node as delimiter-wrapped source text.

    TeX sources get ``$…$`` (``$$…$$`` for display mode); MathML prefers an
    ``annotation encoding="application/x-tex"`` child and otherwise passes
    through as raw markup.
    """
    if el.tag == "script":
        source = el.text_content().strip()
        if "mode=display" in el.get("type").lower():
            return f"$${source}$$"
        return f"${source}$"
    if el.tag == "math":
        annotation = _find_tex_annotation(el)
        if annotation is None:
            return htmldom.serialize(el)
        source = annotation.text_content().strip()
        if el.get("display") == "block":
            return f"$${source}$$"
        return f"${source}$"
    # math-class img/span
    return f"${_math_source_attr(el)}$"


def _find_tex_annotation(math_el: Element) -> Element | None:
    for el in math_el.iter_elements():
        if el.tag == "annotation" and el.get("encoding") == "application/x-tex":
            return el
    return None


def resolve_image_url(src: str, base: str) -> str | None:
    """RFC 3986 resolution against ``base``; None rejects data:/javascript:."""
    src = src.strip()
    if not src:
        return None
    try:
        resolved = urljoin(base, src)
    except ValueError:
        return None
    scheme = urlsplit(resolved).scheme.lower()
    if scheme in ("data", "javascript"):
        return None
    return resolved


# Walk output pieces: ("text", s) inline text, ("raw", s) pre-formatted text,
# ("math", s) serialized math, ("img", url), ("break", "") block boundary.
_Piece = tuple[str, str]


def _walk(el: Element, base_url: str, pieces: list[_Piece], in_pre: bool) -> None:
    for child in el.children:
        if isinstance(child, CommentNode):
            continue
        if isinstance(child, TextNode):
            pieces.append(("raw" if in_pre else "text", child.text))
            continue
        assert isinstance(child, Element)
        if _is_pruned(child):
            continue
        if is_math_node(child):
            pieces.append(("math", serialize_math(child)))
            continue
        if child.tag == "img":
            url = resolve_image_url(child.get("src"), base_url)
            if url is not None:
                pieces.append(("img", url))
            continue
        if child.tag == "br":
            pieces.append(("raw", "\n") if in_pre else ("text", " "))
            continue
        is_block = child.tag in _BLOCK_TAGS
        if is_block:
            pieces.append(("break", ""))
        _walk(child, base_url, pieces, in_pre or child.tag == "pre")
        if is_block:
            pieces.append(("break", ""))


@dataclass
class _Block:
    # fragments of assembled text interleaved with image URLs, in order
    items: list[tuple[str, str]]  # ("text", s) or ("img", url)
    has_math: bool
    text_len: int

    @property
    def has_img(self) -> bool:
        return any(kind == "img" for kind, _ in self.items)


def _assemble_fragment(parts: list[_Piece]) -> str:
    out: list[str] = []
    for kind, s in parts:
        if kind == "text":
            s = _WS_RUN_RE.sub(" ", s)
            if out and out[-1].endswith(" ") and s.startswith(" "):
                s = s[1:]
        if s:
            out.append(s)
    return "".join(out).strip()


def _build_block(pieces: list[_Piece]) -> _Block:
    items: list[tuple[str, str]] = []
    pending: list[_Piece] = []
    has_math = False
    text_len = 0

    def flush() -> None:
        nonlocal text_len
        fragment = _assemble_fragment(pending)
        pending.clear()
        if fragment:
            items.append(("text", fragment))
            text_len += len(fragment)

    for piece in pieces:
        kind = piece[0]
        if kind == "img":
            flush()
            items.append(piece)
        else:
            if kind == "math":
                has_math = True
            pending.append(piece)
    flush()
    return _Block(items=items, has_math=has_math, text_len=text_len)


def extract_document(record: CrawlRecord) -> InterleavedDoc | Rejection:
    """Convert one crawl record into an interleaved document.

    Returns a :class:`Rejection` when nothing survives pruning; raises
    :class:`ExtractError` when the payload cannot be parsed at all.
    """
    try:
        root = htmldom.parse_html(record.html)
    except Exception as exc:  # html.parser rarely raises, but the contract
        raise ExtractError(f"unparseable HTML: {exc}") from exc

    scope = root.find("body") or root
    pieces: list[_Piece] = []
    _walk(scope, record.url, pieces, in_pre=False)

    blocks: list[_Block] = []
    current: list[_Piece] = []
    for piece in pieces + [("break", "")]:
        if piece[0] == "break":
            if current:
                blocks.append(_build_block(current))
                current = []
        else:
            current.append(piece)

    texts: list[str | None] = []
    images: list[str | None] = []
    acc: list[str] = []  # block texts joined with blank lines on flush

    def flush_text() -> None:
        if acc:
            texts.append("\n\n".join(acc))
            images.append(None)
            acc.clear()

    for block in blocks:
        if not block.has_math and not block.has_img and block.text_len < _MIN_BLOCK_CHARS:
            continue
        for kind, value in block.items:
            if kind == "text":
                acc.append(value)
            else:
                flush_text()
                texts.append(None)
                images.append(value)
    flush_text()

    if not texts:
        return Rejection(
            id=record.id,
            url=record.url,
            snapshot_id=record.snapshot_id,
            fetch_time=record.fetch_time,
            reason="empty",
        )
    return InterleavedDoc(
        id=record.id,
        url=record.url,
        snapshot_id=record.snapshot_id,
        fetch_time=record.fetch_time,
        texts=texts,
        images=images,
    ).validate()
