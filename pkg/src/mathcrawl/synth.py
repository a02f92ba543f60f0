"""Seeded synthetic corpora: language samples, math/prose documents, and
whole crawl fixtures.

Everything here is template-pool generation with a caller-supplied seed, so
test corpora and demo runs are reproducible. The language pools are disjoint
by construction; the math/prose generators control how strongly a document
signals "math" via a density knob.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass

_EN_TEMPLATES = [
    "The derivative of a polynomial is computed term by term.",
    "We first prove the statement for the base case and then proceed by induction.",
    "Consider a continuous function defined on a closed interval.",
    "The committee approved the proposal after a long discussion on funding.",
    "Students should review the previous chapter before attempting the exercises.",
    "A rainy morning delayed the departure of the northbound train.",
    "The museum opened a new exhibition about maritime navigation instruments.",
    "Local volunteers planted several hundred trees along the riverbank.",
    "The orchestra rehearsed the second movement twice before the intermission.",
    "Fresh bread and strong coffee were served at the corner bakery.",
]

_ZH_TEMPLATES = [
    "这是一个关于微积分的数学问题。",
    "我们首先证明基本情形，然后使用数学归纳法完成证明。",
    "考虑定义在闭区间上的连续函数。",
    "委员会经过长时间讨论后批准了该提案。",
    "学生在做习题之前应当复习上一章的内容。",
    "一场大雨推迟了北上列车的发车时间。",
    "博物馆开设了关于航海仪器的新展览。",
    "志愿者沿着河岸种植了数百棵树木。",
    "乐团在中场休息前把第二乐章排练了两遍。",
    "街角的面包店供应新鲜面包和浓咖啡。",
]

# mixed French/German/Spanish pool, disjoint from the English templates
_OTHER_TEMPLATES = [
    "Le train de nuit traverse lentement la vallée embrumée.",
    "Nous avons visité le vieux port avant le coucher du soleil.",
    "La bibliothèque municipale ferme ses portes à dix-huit heures.",
    "Der alte Leuchtturm steht seit zweihundert Jahren an der Küste.",
    "Die Kinder spielten den ganzen Nachmittag im verschneiten Garten.",
    "Morgen beginnt das Konzert pünktlich um acht Uhr abends.",
    "El mercado de flores abre temprano los domingos por la mañana.",
    "La receta lleva aceitunas, tomates secos y queso de cabra.",
    "Los pescadores regresaron al puerto antes de la tormenta.",
]

_MATH_SENTENCES = [
    "Let $f(x) = x^2 + 3x - 5$ and compute the critical points of the function.",
    "The integral $$\\int_0^1 x^2 \\, dx = \\frac{1}{3}$$ follows from the power rule.",
    "By the quadratic formula, the roots are $x = \\frac{-b \\pm \\sqrt{b^2-4ac}}{2a}$.",
    "Theorem: every bounded monotone sequence of real numbers converges.",
    "Proof: assume the series converges absolutely; then partial sums form a Cauchy sequence.",
    "The eigenvalues of the matrix satisfy the characteristic equation $\\det(A - \\lambda I) = 0$.",
    "Solve the congruence $3x \\equiv 7 \\pmod{11}$ by multiplying with the inverse.",
    "A triangle with legs 3 and 4 has hypotenuse 5 by the Pythagorean theorem.",
    "The derivative of $\\sin(x)$ equals $\\cos(x)$ for every real argument.",
    "Lemma: the union of countably many countable sets is countable.",
    "Substituting $u = 2x + 1$ reduces the equation to a quadratic in $u$.",
    "The probability of two independent events equals the product of their probabilities.",
]

_PROSE_SENTENCES = [
    "Preheat the oven and whisk the eggs with a pinch of salt.",
    "The championship game drew a record crowd to the downtown stadium.",
    "Her latest novel follows a lighthouse keeper through a long winter.",
    "Travelers praised the quiet beaches and the friendly cafe owners.",
    "The city council debated the new bicycle lanes for three hours.",
    "Simmer the sauce gently until it thickens, stirring now and then.",
    "The band announced a reunion tour across twelve coastal cities.",
    "Gardeners recommend pruning the roses before the first frost.",
    "The documentary explores the daily routines of mountain shepherds.",
    "Fold the dough twice and let it rest under a damp cloth.",
    "The ferry schedule changes at the end of the tourist season.",
    "Critics called the gallery's new wing a triumph of restraint.",
]

_FILLER_WORDS = [
    "note", "that", "here", "with", "from", "into", "about", "under", "between",
    "the", "and", "for", "this", "then", "when", "where", "which", "while",
]


def sample_language_doc(lang: str, rng: random.Random, sentences: int = 6) -> str:
    pool = {"en": _EN_TEMPLATES, "zh": _ZH_TEMPLATES, "other": _OTHER_TEMPLATES}[lang]
    return " ".join(rng.choice(pool) for _ in range(sentences))


def language_corpus(
    rng: random.Random, per_class: int, sentences: int = 6
) -> list[tuple[str, str]]:
    """(text, label) pairs, ``per_class`` each of en/zh/other, shuffled."""
    docs = [
        (sample_language_doc(lang, rng, sentences), lang)
        for lang in ("en", "zh", "other")
        for _ in range(per_class)
    ]
    rng.shuffle(docs)
    return docs


def math_doc(rng: random.Random, density: float = 1.0, sentences: int = 8) -> str:
    """Math-flavored document; ``density`` is the fraction of math sentences."""
    out = []
    for _ in range(sentences):
        pool = _MATH_SENTENCES if rng.random() < density else _PROSE_SENTENCES
        out.append(rng.choice(pool))
    return " ".join(out)


def prose_doc(rng: random.Random, sentences: int = 8) -> str:
    return " ".join(rng.choice(_PROSE_SENTENCES) for _ in range(sentences))


def math_prose_corpus(
    rng: random.Random,
    n_per_class: int,
    noise: float = 0.0,
    min_density: float = 1.0,
) -> list[tuple[str, str]]:
    """Labeled math/other corpus; ``noise`` flips that fraction of labels.

    Positives draw a per-document math density from [min_density, 1], which
    spreads classifier scores instead of saturating them.
    """
    docs: list[tuple[str, str]] = []
    for _ in range(n_per_class):
        density = rng.uniform(min_density, 1.0)
        docs.append((math_doc(rng, density=density), "math"))
        docs.append((prose_doc(rng), "other"))
    if noise > 0:
        flips = rng.sample(range(len(docs)), int(noise * len(docs)))
        for i in flips:
            text, label = docs[i]
            docs[i] = (text, "other" if label == "math" else "math")
    rng.shuffle(docs)
    return docs


def separable_corpus(
    rng: random.Random, n_per_class: int, vocab_size: int = 200, words: int = 50
) -> list[tuple[list[str], str]]:
    """Two classes with disjoint vocabularies: (feature list, label) pairs."""
    vocab_a = [f"alpha{i}" for i in range(vocab_size)]
    vocab_b = [f"beta{i}" for i in range(vocab_size)]
    examples: list[tuple[list[str], str]] = []
    for _ in range(n_per_class):
        examples.append(([rng.choice(vocab_a) for _ in range(words)], "a"))
        examples.append(([rng.choice(vocab_b) for _ in range(words)], "b"))
    rng.shuffle(examples)
    return examples


def numeric_math_doc(rng: random.Random, value_rng: random.Random, sentences: int = 6) -> str:
    """Math document whose surface numbers come from ``value_rng``.

    Using different ``value_rng`` ranges for train and test makes raw-token
    models face unseen number strings while normalized models see <NUM>.
    """
    out = []
    for _ in range(sentences):
        a = value_rng.randint(1, 10**6)
        b = round(value_rng.uniform(0, 1000), value_rng.randint(1, 4))
        filler = " ".join(rng.choice(_FILLER_WORDS) for _ in range(4))
        out.append(f"compute {a} plus {b} then {filler} equals {a + 1}")
    return " ".join(out)


def numeric_prose_doc(rng: random.Random, sentences: int = 6) -> str:
    out = []
    for _ in range(sentences):
        filler = " ".join(rng.choice(_FILLER_WORDS) for _ in range(4))
        out.append(f"{rng.choice(_PROSE_SENTENCES)} {filler}")
    return " ".join(out)


@dataclass
class PageSpec:
    """Knobs for one synthetic crawl page."""

    doc_id: str
    url: str
    snapshot: str
    timestamp: str
    body_html: str


def html_page(body_html: str, with_boilerplate: bool = True) -> str:
    nav = "<nav>Home | Products | About</nav>" if with_boilerplate else ""
    footer = "<footer>© example.org — all rights reserved</footer>" if with_boilerplate else ""
    return (
        "<html><head><title>Sample</title></head>"
        f"<body>{nav}{body_html}{footer}</body></html>"
    )


def paragraphs_html(texts: list[str]) -> str:
    return "".join(f"<p>{t}</p>" for t in texts)


def record_line(spec: PageSpec) -> str:
    return json.dumps(
        {
            "id": spec.doc_id,
            "url": spec.url,
            "snapshot": spec.snapshot,
            "timestamp": spec.timestamp,
            "html": spec.body_html,
        },
        ensure_ascii=False,
    )
