"""Error-tolerant DOM built on ``html.parser``.

A deliberately small tree model: elements, text, comments. Unclosed tags are
auto-closed at EOF, stray end tags are ignored, duplicate attributes keep
their first value. ``script``/``style`` payloads arrive as raw text (the
stdlib parser switches to CDATA mode for them), which is exactly what the
math extractor needs for TeX sources.
"""

from __future__ import annotations

from html import escape
from html.parser import HTMLParser

VOID_ELEMENTS = frozenset(
    "area base br col embed hr img input link meta param source track wbr".split()
)


class Node:
    __slots__ = ("parent",)


class TextNode(Node):
    __slots__ = ("text",)

    def __init__(self, text: str):
        self.text = text

    def __repr__(self) -> str:
        return f"TextNode({self.text!r})"


class CommentNode(Node):
    __slots__ = ("text",)

    def __init__(self, text: str):
        self.text = text


class Element(Node):
    __slots__ = ("tag", "attrs", "children")

    def __init__(self, tag: str, attrs: dict[str, str] | None = None):
        self.tag = tag
        self.attrs = attrs or {}
        self.children: list[Node] = []

    def __repr__(self) -> str:
        return f"<{self.tag} {self.attrs} children={len(self.children)}>"

    def get(self, name: str, default: str = "") -> str:
        return self.attrs.get(name, default)

    def text_content(self) -> str:
        """All descendant text, concatenated in document order."""
        parts: list[str] = []
        _collect_text(self, parts)
        return "".join(parts)

    def iter_elements(self):
        """Depth-first iterator over descendant elements (self excluded)."""
        for child in self.children:
            if isinstance(child, Element):
                yield child
                yield from child.iter_elements()

    def find(self, tag: str) -> "Element | None":
        for el in self.iter_elements():
            if el.tag == tag:
                return el
        return None


def _collect_text(el: Element, parts: list[str]) -> None:
    for child in el.children:
        if isinstance(child, TextNode):
            parts.append(child.text)
        elif isinstance(child, Element):
            _collect_text(child, parts)


class _TreeBuilder(HTMLParser):
    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self.root = Element("#document")
        self._stack = [self.root]

    def _append(self, node: Node) -> None:
        node.parent = self._stack[-1]
        self._stack[-1].children.append(node)

    def handle_starttag(self, tag: str, attrs) -> None:
        el = Element(tag, _attr_dict(attrs))
        self._append(el)
        if tag not in VOID_ELEMENTS:
            self._stack.append(el)

    def handle_startendtag(self, tag: str, attrs) -> None:
        self._append(Element(tag, _attr_dict(attrs)))

    def handle_endtag(self, tag: str) -> None:
        # close the nearest matching open element; ignore stray end tags
        for i in range(len(self._stack) - 1, 0, -1):
            if self._stack[i].tag == tag:
                del self._stack[i:]
                return

    def handle_data(self, data: str) -> None:
        if data:
            self._append(TextNode(data))

    def handle_comment(self, data: str) -> None:
        self._append(CommentNode(data))


def parse_html(text: str) -> Element:
    """Parse HTML into a tree rooted at a synthetic ``#document`` element."""
    builder = _TreeBuilder()
    builder.feed(text)
    builder.close()
    return builder.root


def _attr_dict(attrs) -> dict[str, str]:
    out: dict[str, str] = {}
    for name, value in attrs:
        out.setdefault(name, value if value is not None else "")
    return out


def serialize(el: Element) -> str:
    """Reconstruct markup for an element subtree.

    Used to pass MathML through verbatim; attribute order is parse order and
    text is re-escaped, so canonical input markup round-trips unchanged.
    """
    parts: list[str] = []
    _serialize_into(el, parts)
    return "".join(parts)


def _serialize_into(node: Node, parts: list[str]) -> None:
    if isinstance(node, TextNode):
        parts.append(escape(node.text, quote=False))
        return
    if isinstance(node, CommentNode):
        return
    assert isinstance(node, Element)
    attrs = "".join(f' {name}="{escape(value)}"' for name, value in node.attrs.items())
    if node.tag in VOID_ELEMENTS:
        parts.append(f"<{node.tag}{attrs}>")
        return
    parts.append(f"<{node.tag}{attrs}>")
    for child in node.children:
        _serialize_into(child, parts)
    parts.append(f"</{node.tag}>")
