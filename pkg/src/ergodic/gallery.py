"""Gallery of exchangeable structure samplers.

Each constructor returns a sampler whose type function reads randomness
only through subsets of tuple positions, so exchangeability holds by
construction. The one deliberate exception is mixture_control, which
reads the empty-set value to pick a global coin and therefore fails the
independence-across-disjoint-tuples audit: it ships as the labeled
negative fixture for dissociation testing.
"""

from __future__ import annotations

from fractions import Fraction

from .engine import AhkSampler
from .logic import Signature, TypeFingerprint
from .seeds import XiFamily


def truncated_geometric(u: float, num_classes: int) -> int:
    """Class c < num_classes with P(c) = 2^-(c+1); tail mass on the last class.

    u is a 53-bit dyadic rational, so the inverse-CDF arithmetic below
    is exact integer work: c is the unique class with
    1 - 2^-c <= u < 1 - 2^-(c+1), clipped to the last class.
    """
    if num_classes < 1:
        raise ValueError("need at least one class")
    m = round(u * 2.0**53)
    v = (1 << 53) - m  # in [1, 2^53]
    c = 53 - (v - 1).bit_length()
    return min(c, num_classes - 1)


def _relation_block(prefix: str, count: int, arity: int) -> tuple[tuple[str, int], ...]:
    return tuple((f"{prefix}{m}", arity) for m in range(count))


class KaleidoscopeHypergraph(AhkSampler):
    """k-uniform hypergraph with an independent fair bit per relation per k-set.

    R_m holds on an injective k-tuple iff bit m of the uniform value
    attached to its underlying set is 1, so every relation is symmetric
    and irreflexive and all d bits are independent fair coins.
    """

    def __init__(self, k: int, d: int):
        if k < 1 or d < 1:
            raise ValueError("need k >= 1 and d >= 1")
        self.k = k
        self.d = d
        self.signature = Signature(_relation_block("R", d, k))
        self.name = f"kaleidoscope:k={k},d={d}"

    def type_fn(self, n: int, xs: XiFamily) -> TypeFingerprint:
        k = self.k

        def atom(sym: int, t: tuple[int, ...]) -> bool:
            s = frozenset(t)
            if len(s) != k:
                return False
            return xs.bit(s, sym) == 1

        return self._fingerprint(n, atom)


class MaxGraph(AhkSampler):
    """Edge pattern of a pair is the lexicographic max of the endpoint prefixes.

    Every vertex carries a d-bit prefix; R_m(i, j) holds iff bit m of
    max(prefix_i, prefix_j) is set. Realized repeated 2-types are rooted
    at the vertex holding the max.
    """

    def __init__(self, d: int):
        if d < 1:
            raise ValueError("need d >= 1")
        self.d = d
        self.signature = Signature(_relation_block("R", d, 2))
        self.name = f"maxgraph:d={d}"

    def type_fn(self, n: int, xs: XiFamily) -> TypeFingerprint:
        d = self.d
        prefixes: dict[int, int] = {}

        def prefix(i: int) -> int:
            got = prefixes.get(i)
            if got is None:
                got = xs.prefix((i,), d)
                prefixes[i] = got
            return got

        def atom(sym: int, t: tuple[int, ...]) -> bool:
            i, j = t
            if i == j:
                return False
            m = max(prefix(i), prefix(j))
            return (m >> (d - 1 - sym)) & 1 == 1

        return self._fingerprint(n, atom)


class GeometricGraph(AhkSampler):
    """Random geometric graph on the box [0, 2]^dim with a bonus coin.

    Vertices get uniform points; an edge appears iff the chosen norm
    distance is below 1 and an independent pair coin of weight p lands.
    `point_override` pins chosen positions to fixed points; it exists
    for calibration tests and deliberately breaks exchangeability, so
    leave it empty for any audited use.
    """

    NORMS = ("euclidean", "sup")

    def __init__(self, dim: int, norm: str = "euclidean", p: float = 0.5,
                 point_override: dict[int, tuple[float, ...]] | None = None):
        if dim < 1:
            raise ValueError("need dim >= 1")
        if norm not in self.NORMS:
            raise ValueError(f"unknown norm {norm!r}")
        if not 0.0 <= p <= 1.0:
            raise ValueError("p must lie in [0, 1]")
        self.dim = dim
        self.norm = norm
        self.p = p
        self.point_override = dict(point_override or {})
        self.signature = Signature((("R0", 2),))
        self.name = f"geometric:dim={dim},norm={norm},p={p}"

    def _close(self, a: tuple[float, ...], b: tuple[float, ...]) -> bool:
        if self.norm == "euclidean":
            return sum((x - y) ** 2 for x, y in zip(a, b)) < 1.0
        return max(abs(x - y) for x, y in zip(a, b)) < 1.0

    def type_fn(self, n: int, xs: XiFamily) -> TypeFingerprint:
        points: dict[int, tuple[float, ...]] = {}

        def point(i: int) -> tuple[float, ...]:
            got = points.get(i)
            if got is None:
                if i in self.point_override:
                    got = self.point_override[i]
                else:
                    got = tuple(2.0 * xs.value((i,), c) for c in range(self.dim))
                points[i] = got
            return got

        def atom(sym: int, t: tuple[int, ...]) -> bool:
            i, j = t
            if i == j:
                return False
            if not self._close(point(i), point(j)):
                return False
            return xs.value(frozenset((i, j))) < self.p

        return self._fingerprint(n, atom)


class BlowupControl(AhkSampler):
    """Equivalence classes of geometric sizes, exposed through unary bits.

    Each vertex picks class c with probability 2^-(c+1) (tail on the
    last of 2^d - 1 classes); E relates same-class vertices and P_m
    reads bit m of c+1, so distinct classes get distinct unary types.
    Every realized 1-type here has positive measure: this is the
    ergodic-but-not-properly-so control.
    """

    def __init__(self, d: int):
        if d < 1:
            raise ValueError("need d >= 1")
        self.d = d
        self.num_classes = 2**d - 1
        self.signature = Signature((("E", 2),) + _relation_block("P", d, 1))
        self.name = f"blowup:d={d}"

    def class_probability(self, c: int) -> Fraction:
        if not 0 <= c < self.num_classes:
            raise ValueError("class out of range")
        if c < self.num_classes - 1:
            return Fraction(1, 2 ** (c + 1))
        return Fraction(1, 2 ** (self.num_classes - 1))

    def type_fn(self, n: int, xs: XiFamily) -> TypeFingerprint:
        classes: dict[int, int] = {}

        def cls(i: int) -> int:
            got = classes.get(i)
            if got is None:
                got = truncated_geometric(xs.value((i,)), self.num_classes)
                classes[i] = got
            return got

        def atom(sym: int, t: tuple[int, ...]) -> bool:
            if sym == 0:  # E is the literal equivalence "same class"
                return cls(t[0]) == cls(t[1])
            bit = sym - 1
            return (cls(t[0]) + 1) >> bit & 1 == 1

        return self._fingerprint(n, atom)


class KaleidoscopeDigraph(AhkSampler):
    """Single binary relation encoding a two-sided vertex population.

    A fair coin splits vertices into loops (O) and non-loops (P). O
    carries a ladder class from a truncated geometric; R preorders O by
    class. Each P vertex holds a random class set A and relates to
    exactly the O vertices whose class lies in A. No fact ever points
    from O into P or between P vertices.
    """

    def __init__(self, d: int):
        if d < 1:
            raise ValueError("need d >= 1")
        self.d = d
        self.signature = Signature((("R", 2),))
        self.name = f"digraph:d={d}"

    def type_fn(self, n: int, xs: XiFamily) -> TypeFingerprint:
        d = self.d
        side: dict[int, bool] = {}  # True = loop side (O)
        ladder: dict[int, int] = {}

        def is_o(i: int) -> bool:
            got = side.get(i)
            if got is None:
                got = xs.value((i,), 0) < 0.5
                side[i] = got
            return got

        def cls(i: int) -> int:
            got = ladder.get(i)
            if got is None:
                got = truncated_geometric(xs.value((i,), 1), d)
                ladder[i] = got
            return got

        def atom(sym: int, t: tuple[int, ...]) -> bool:
            i, j = t
            if i == j:
                return is_o(i)
            if is_o(i) and is_o(j):
                return cls(i) <= cls(j)
            if not is_o(i) and is_o(j):
                return xs.bit((i,), cls(j), base_stream=2) == 1
            return False

        return self._fingerprint(n, atom)


class BipartiteLabels(AhkSampler):
    """Labeled downward-closed columns between a marked and unmarked side.

    P splits vertices by a fair coin. A pair (x, y) with P(x) and not
    P(y) draws one label i (geometric, truncated to i_depth) and a
    column height k: if i lies in x's random label set the column is
    infinite with probability 1/2 and of height n with probability
    2^-(n+1); otherwise height n with probability 2^-n. R^i_j(x, y)
    holds for exactly the j < k (materialized to j_depth).
    """

    def __init__(self, i_depth: int, j_depth: int):
        if i_depth < 1 or j_depth < 1:
            raise ValueError("need i_depth >= 1 and j_depth >= 1")
        self.i_depth = i_depth
        self.j_depth = j_depth
        symbols = [("P", 1)]
        for i in range(i_depth):
            for j in range(j_depth):
                symbols.append((f"R{i}_{j}", 2))
        self.signature = Signature(tuple(symbols))
        self.name = f"bipartite:i={i_depth},j={j_depth}"

    def column_height(self, in_label_set: bool, u: float) -> int:
        """Materialized column height in [0, j_depth]; j_depth means full."""
        if in_label_set:
            if u < 0.5:
                return self.j_depth  # the k = infinity branch
            k = 1 + truncated_geometric(2.0 * u - 1.0, self.j_depth)
        else:
            k = 1 + truncated_geometric(u, self.j_depth)
        return min(k, self.j_depth)

    def type_fn(self, n: int, xs: XiFamily) -> TypeFingerprint:
        marked: dict[int, bool] = {}

        def is_marked(x: int) -> bool:
            got = marked.get(x)
            if got is None:
                got = xs.value((x,), 0) < 0.5
                marked[x] = got
            return got

        def in_set(x: int, i: int) -> bool:
            return xs.bit((x,), i, base_stream=1) == 1

        pair_memo: dict[tuple[int, int], tuple[int, int]] = {}

        def pair_data(x: int, y: int) -> tuple[int, int]:
            got = pair_memo.get((x, y))
            if got is None:
                label = truncated_geometric(xs.value(frozenset((x, y)), 0), self.i_depth)
                height = self.column_height(
                    in_set(x, label), xs.value(frozenset((x, y)), 1)
                )
                got = (label, height)
                pair_memo[(x, y)] = got
            return got

        def atom(sym: int, t: tuple[int, ...]) -> bool:
            if sym == 0:
                return is_marked(t[0])
            x, y = t
            if x == y or not is_marked(x) or is_marked(y):
                return False
            i, j = divmod(sym - 1, self.j_depth)
            label, height = pair_data(x, y)
            return label == i and j < height

        return self._fingerprint(n, atom)


class MixtureControl(AhkSampler):
    """Two-density random graph mixture: the labeled negative fixture.

    One global coin (read from the empty-set value) picks the edge
    density p1 or p2 for the entire structure; pairs then flip
    independent p-coins. The resulting measure is exchangeable but not
    dissociated unless p1 = p2, so dissociation_test flags it. The
    degenerate p1 = p2 variant is allowed for calibration.
    """

    reads_empty_set = True

    def __init__(self, p1: float, p2: float):
        for p in (p1, p2):
            if not 0.0 <= p <= 1.0:
                raise ValueError("densities must lie in [0, 1]")
        self.p1 = p1
        self.p2 = p2
        self.signature = Signature((("R0", 2),))
        self.name = f"mixture:p1={p1},p2={p2}"

    def type_fn(self, n: int, xs: XiFamily) -> TypeFingerprint:
        p = self.p1 if xs.value(()) < 0.5 else self.p2

        def atom(sym: int, t: tuple[int, ...]) -> bool:
            i, j = t
            if i == j:
                return False
            return xs.value(frozenset((i, j))) < p

        return self._fingerprint(n, atom)


# ---------------------------------------------------------------------------
# constructors and CLI spec strings
# ---------------------------------------------------------------------------


def kaleidoscope_hypergraph(k: int, d: int) -> KaleidoscopeHypergraph:
    return KaleidoscopeHypergraph(k, d)


def max_graph(d: int) -> MaxGraph:
    return MaxGraph(d)


def geometric_graph(dim: int, norm: str = "euclidean", p: float = 0.5) -> GeometricGraph:
    return GeometricGraph(dim, norm, p)


def blowup_control(d: int) -> BlowupControl:
    return BlowupControl(d)


def kaleidoscope_digraph(d: int) -> KaleidoscopeDigraph:
    return KaleidoscopeDigraph(d)


def bipartite_labels(i_depth: int, j_depth: int) -> BipartiteLabels:
    return BipartiteLabels(i_depth, j_depth)


def mixture_control(p1: float, p2: float) -> MixtureControl:
    return MixtureControl(p1, p2)


GALLERY = (
    "kaleidoscope",
    "maxgraph",
    "geometric",
    "blowup",
    "digraph",
    "bipartite",
    "mixture",
)


def _parse_params(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    if not text:
        return out
    for piece in text.split(","):
        if "=" not in piece:
            raise ValueError(f"malformed parameter {piece!r}")
        key, value = piece.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def parse_sampler_spec(spec: str) -> AhkSampler:
    """Build a sampler from a CLI spec string like 'kaleidoscope:k=2,d=8'."""
    head, _, rest = spec.partition(":")
    params = _parse_params(rest)
    try:
        if head == "kaleidoscope":
            built = kaleidoscope_hypergraph(int(params.pop("k")), int(params.pop("d")))
        elif head == "maxgraph":
            built = max_graph(int(params.pop("d")))
        elif head == "geometric":
            built = geometric_graph(
                int(params.pop("dim")),
                params.pop("norm", "euclidean"),
                float(params.pop("p", "0.5")),
            )
        elif head == "blowup":
            built = blowup_control(int(params.pop("d")))
        elif head == "digraph":
            built = kaleidoscope_digraph(int(params.pop("d")))
        elif head == "bipartite":
            built = bipartite_labels(int(params.pop("i")), int(params.pop("j")))
        elif head == "mixture":
            built = mixture_control(float(params.pop("p1")), float(params.pop("p2")))
        else:
            raise ValueError(
                f"unknown sampler {head!r} (expected one of {', '.join(GALLERY)})"
            )
    except KeyError as missing:
        raise ValueError(f"sampler {head!r} is missing parameter {missing}") from None
    if params:
        raise ValueError(f"unknown parameters for {head!r}: {sorted(params)}")
    return built
