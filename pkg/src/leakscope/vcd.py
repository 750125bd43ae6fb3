"""Value Change Dump parsing and per-cycle resampling.

Supports the RTL behavioral-simulation subset of VCD: ``$timescale``,
``$scope module``, ``$var wire|reg``, ``$upscope``, ``$enddefinitions``,
``$dumpvars``, scalar changes (``0/1/x/z`` + id code) and binary vector
changes (``b...``). Real-valued and event vars are skipped along with their
value changes. Unknown bits are preserved as distinct x/z marks all the way
through resampling; downstream metrics treat them as zero and report an
occupancy ratio per module.

The resampled view is sample-and-hold at rising clock edges: a cycle column
holds, for every signal, the last value written at or before that edge.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple


class VcdParseError(ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class XzCell(NamedTuple):
    """A sampled value with unknown-bit masks; value bits under a mask are 0."""

    value: int
    xmask: int
    zmask: int


class Change(NamedTuple):
    time: int
    id_code: str
    value: int
    xmask: int
    zmask: int


@dataclass(frozen=True)
class SignalDecl:
    id_code: str
    name: str
    width: int
    scope_path: tuple[str, ...]
    var_type: str = "wire"

    def __post_init__(self):
        if self.width < 1:
            raise VcdParseError(f"signal {self.name}: width must be >= 1")
        if not self.scope_path:
            raise VcdParseError(f"signal {self.name}: empty scope path")

    @property
    def full_name(self) -> str:
        return ".".join(self.scope_path + (self.name,))


@dataclass
class ModuleNode:
    name: str
    children: list["ModuleNode"] = field(default_factory=list)
    signals: list[SignalDecl] = field(default_factory=list)

    def child(self, name: str) -> "ModuleNode":
        for c in self.children:
            if c.name == name:
                return c
        node = ModuleNode(name=name)
        self.children.append(node)
        return node

    def walk(self, prefix: tuple[str, ...] = ()):
        """Yield (path, node) depth-first, declaration order."""
        path = prefix + (self.name,)
        yield path, self
        for c in self.children:
            yield from c.walk(path)

    def find(self, path: Iterable[str]) -> "ModuleNode":
        parts = list(path)
        if not parts or parts[0] != self.name:
            raise KeyError(f"no module at path {'.'.join(parts)}")
        node = self
        for part in parts[1:]:
            for c in node.children:
                if c.name == part:
                    node = c
                    break
            else:
                raise KeyError(f"no module at path {'.'.join(parts)}")
        return node


@dataclass
class WaveDump:
    timescale: str
    declarations: list[SignalDecl]
    hierarchy: ModuleNode
    changes: list[Change]

    def __post_init__(self):
        self.by_code = {d.id_code: d for d in self.declarations}

    def structurally_equal(self, other: "WaveDump") -> bool:
        return (
            self.declarations == other.declarations
            and _tree_equal(self.hierarchy, other.hierarchy)
            and self.changes == other.changes
        )


def _tree_equal(a: ModuleNode, b: ModuleNode) -> bool:
    if a.name != b.name or a.signals != b.signals or len(a.children) != len(b.children):
        return False
    return all(_tree_equal(x, y) for x, y in zip(a.children, b.children))


_SCALAR_CHARS = frozenset("01xXzZ")


def _tokens_with_lines(text: str):
    for lineno, line in enumerate(text.splitlines(), start=1):
        for tok in line.split():
            yield tok, lineno


def parse_vcd(data: bytes | str) -> WaveDump:
    """Parse a VCD byte/text stream into a WaveDump."""
    if isinstance(data, bytes):
        data = data.decode("ascii", errors="replace")

    toks = _tokens_with_lines(data)
    timescale = ""
    declarations: list[SignalDecl] = []
    ignored_codes: set[str] = set()
    root: ModuleNode | None = None
    scope_stack: list[ModuleNode] = []
    by_code: dict[str, SignalDecl] = {}

    def take():
        try:
            return next(toks)
        except StopIteration:
            return None, None

    def read_until_end(lineno, what):
        parts = []
        while True:
            tok, ln = take()
            if tok is None:
                raise VcdParseError(f"unexpected end of stream inside {what}", lineno)
            if tok == "$end":
                return parts
            parts.append(tok)

    # --- definitions -------------------------------------------------------
    while True:
        tok, ln = take()
        if tok is None:
            raise VcdParseError("stream ended before $enddefinitions")
        if tok == "$enddefinitions":
            read_until_end(ln, "$enddefinitions")
            break
        if tok in ("$date", "$version", "$comment"):
            read_until_end(ln, tok)
        elif tok == "$timescale":
            timescale = " ".join(read_until_end(ln, "$timescale"))
        elif tok == "$scope":
            parts = read_until_end(ln, "$scope")
            if len(parts) != 2:
                raise VcdParseError(f"malformed $scope: {' '.join(parts)}", ln)
            scope_type, name = parts
            if scope_type != "module":
                raise VcdParseError(f"unsupported scope type '{scope_type}'", ln)
            if not scope_stack:
                if root is None:
                    root = ModuleNode(name=name)
                    scope_stack.append(root)
                elif root.name == name:
                    scope_stack.append(root)
                else:
                    raise VcdParseError("multiple top-level scopes are not supported", ln)
            else:
                scope_stack.append(scope_stack[-1].child(name))
        elif tok == "$upscope":
            read_until_end(ln, "$upscope")
            if not scope_stack:
                raise VcdParseError("$upscope without matching $scope", ln)
            scope_stack.pop()
        elif tok == "$var":
            parts = read_until_end(ln, "$var")
            if len(parts) < 4:
                raise VcdParseError(f"malformed $var: {' '.join(parts)}", ln)
            var_type, width_s, code, name = parts[0], parts[1], parts[2], parts[3]
            # trailing tokens like "[31:0]" are part of the reference; ignored
            if var_type in ("real", "realtime", "event"):
                ignored_codes.add(code)
                continue
            if var_type not in ("wire", "reg", "integer", "logic"):
                raise VcdParseError(f"unsupported var type '{var_type}'", ln)
            try:
                width = int(width_s)
            except ValueError:
                raise VcdParseError(f"bad width '{width_s}' in $var", ln) from None
            if width < 1:
                raise VcdParseError(f"bad width {width} in $var", ln)
            if not scope_stack:
                raise VcdParseError(f"$var '{name}' outside any scope", ln)
            if code in by_code:
                raise VcdParseError(f"duplicate id code '{code}'", ln)
            decl = SignalDecl(
                id_code=code,
                name=name,
                width=width,
                scope_path=tuple(n.name for n in scope_stack),
                var_type=var_type,
            )
            by_code[code] = decl
            declarations.append(decl)
            scope_stack[-1].signals.append(decl)
        else:
            raise VcdParseError(f"unexpected token '{tok}' in definitions", ln)

    if root is None:
        raise VcdParseError("no $scope found in definitions")

    # --- value changes -----------------------------------------------------
    changes: list[Change] = []
    cur_time = 0
    have_time = False
    last_good = 0

    def parse_bits(bits: str, width: int, ln: int) -> tuple[int, int, int]:
        if len(bits) > width:
            raise VcdParseError(
                f"vector value '{bits}' wider than declared width {width}", ln
            )
        if len(bits) < width:  # left-extend; x/z extend with themselves
            lead = bits[0]
            pad = lead if lead in "xXzZ" else "0"
            bits = pad * (width - len(bits)) + bits
        value = xmask = zmask = 0
        for ch in bits:
            value <<= 1
            xmask <<= 1
            zmask <<= 1
            if ch == "1":
                value |= 1
            elif ch == "0":
                pass
            elif ch in "xX":
                xmask |= 1
            elif ch in "zZ":
                zmask |= 1
            else:
                raise VcdParseError(f"bad bit character '{ch}'", ln)
        return value, xmask, zmask

    while True:
        tok, ln = take()
        if tok is None:
            break
        if tok.startswith("#"):
            try:
                t = int(tok[1:])
            except ValueError:
                raise VcdParseError(f"bad timestamp '{tok}'", ln) from None
            if have_time and t < cur_time:
                raise VcdParseError(f"timestamp {t} goes backwards", ln)
            cur_time = t
            have_time = True
            last_good = t
        elif tok in ("$dumpvars", "$dumpall", "$dumpon", "$dumpoff", "$end"):
            continue
        elif tok == "$comment":
            read_until_end(ln, "$comment")
        elif tok[0] in _SCALAR_CHARS and len(tok) > 1:
            code = tok[1:]
            if code in ignored_codes:
                continue
            decl = by_code.get(code)
            if decl is None:
                raise VcdParseError(f"value change for undeclared id code '{code}'", ln)
            value, xmask, zmask = parse_bits(tok[0], decl.width, ln)
            changes.append(Change(cur_time, code, value, xmask, zmask))
        elif tok[0] in "bB":
            bits = tok[1:]
            nxt, ln2 = take()
            if nxt is None:
                raise VcdParseError(
                    f"truncated stream: vector value without id code "
                    f"(last good timestamp {last_good})", ln
                )
            code = nxt
            if code in ignored_codes:
                continue
            decl = by_code.get(code)
            if decl is None:
                raise VcdParseError(f"value change for undeclared id code '{code}'", ln2)
            value, xmask, zmask = parse_bits(bits, decl.width, ln)
            changes.append(Change(cur_time, code, value, xmask, zmask))
        elif tok[0] in "rR":
            nxt, _ = take()  # real value for an ignored var
            if nxt is None:
                raise VcdParseError(
                    f"truncated stream (last good timestamp {last_good})", ln
                )
            if nxt not in ignored_codes:
                raise VcdParseError(f"real value change for non-real id '{nxt}'", ln)
        else:
            raise VcdParseError(f"unexpected token '{tok}' in value changes", ln)

    return WaveDump(
        timescale=timescale,
        declarations=declarations,
        hierarchy=root,
        changes=changes,
    )


def load_vcd_file(path) -> WaveDump:
    with open(path, "rb") as f:
        return parse_vcd(f.read())


@dataclass
class CycleMatrix:
    """Per-cycle sampled values, one column per rising clock edge."""

    cells: dict[str, list]  # id_code -> d cells (int | XzCell)
    n_cycles: int
    edge_times: list[int]
    clock_code: str

    @property
    def cycle_period(self) -> int:
        if len(self.edge_times) >= 2:
            return self.edge_times[1] - self.edge_times[0]
        return self.edge_times[0] if self.edge_times else 0

    def truncated(self, d: int) -> "CycleMatrix":
        if d == self.n_cycles:
            return self
        return CycleMatrix(
            cells={k: v[:d] for k, v in self.cells.items()},
            n_cycles=d,
            edge_times=self.edge_times[:d],
            clock_code=self.clock_code,
        )


def _resolve_signal(dump: WaveDump, name: str) -> SignalDecl:
    matches = [d for d in dump.declarations if d.full_name == name]
    if not matches:
        matches = [d for d in dump.declarations if d.name == name]
    if not matches:
        raise VcdParseError(f"clock signal '{name}' not found")
    if len(matches) > 1:
        raise VcdParseError(f"clock name '{name}' is ambiguous ({len(matches)} matches)")
    return matches[0]


def resample_per_cycle(dump: WaveDump, clock_name: str) -> CycleMatrix:
    """Sample every signal at each rising edge of the named 1-bit clock.

    A rising edge is a transition from a known 0 to 1. Changes that share the
    edge's timestamp are applied before sampling.
    """
    clock = _resolve_signal(dump, clock_name)
    if clock.width != 1:
        raise VcdParseError(f"clock '{clock_name}' is {clock.width} bits wide, need 1")

    cur: dict[str, object] = {}
    for decl in dump.declarations:
        full = (1 << decl.width) - 1
        cur[decl.id_code] = XzCell(0, full, 0)  # pre-dump values are all-x

    columns: dict[str, list] = {d.id_code: [] for d in dump.declarations}
    edge_times: list[int] = []

    idx = 0
    changes = dump.changes
    n = len(changes)
    clock_prev = cur[clock.id_code]
    while idx < n:
        t = changes[idx].time
        while idx < n and changes[idx].time == t:
            ch = changes[idx]
            if ch.xmask or ch.zmask:
                cur[ch.id_code] = XzCell(ch.value, ch.xmask, ch.zmask)
            else:
                cur[ch.id_code] = ch.value
            idx += 1
        clock_now = cur[clock.id_code]
        if clock_prev == 0 and clock_now == 1:
            edge_times.append(t)
            for code, col in columns.items():
                col.append(cur[code])
        clock_prev = clock_now

    if not edge_times:
        raise VcdParseError(f"clock '{clock_name}' has no rising edges")

    return CycleMatrix(
        cells=columns,
        n_cycles=len(edge_times),
        edge_times=edge_times,
        clock_code=clock.id_code,
    )


@dataclass
class WordSeries:
    """Per-cycle concatenation of a module's own signals (x/z bits as 0)."""

    words: list[int]
    width: int
    xz_bits: int  # total count of x/z bits across all cells


def module_word_series(matrix: CycleMatrix, node: ModuleNode) -> WordSeries:
    if not node.signals:
        raise ValueError(f"module '{node.name}' owns no signals")
    width = sum(s.width for s in node.signals)
    words = []
    xz_bits = 0
    sig_cols = [(matrix.cells[s.id_code], s.width) for s in node.signals]
    for c in range(matrix.n_cycles):
        word = 0
        for col, w in sig_cols:
            cell = col[c]
            if type(cell) is XzCell:
                xz_bits += (cell.xmask | cell.zmask).bit_count()
                cell = cell.value
            word = (word << w) | cell
        words.append(word)
    return WordSeries(words=words, width=width, xz_bits=xz_bits)


@dataclass
class RunSet:
    """Aligned per-cycle matrices for N runs over one hierarchy."""

    runs: list[CycleMatrix]
    n_cycles: int
    signal_order: list[str]
    hierarchy: ModuleNode
    declarations: list[SignalDecl]
    labels: list[str]

    @property
    def n_runs(self) -> int:
        return len(self.runs)

    @property
    def cycle_period(self) -> int:
        return self.runs[0].cycle_period if self.runs else 0


def read_manifest(path) -> tuple[list[str], list[str]]:
    """Read a run manifest: one VCD path per line, optional second column label.

    Relative paths are resolved against the manifest's directory.
    """
    base = os.path.dirname(os.path.abspath(path))
    paths, labels = [], []
    with open(path) as f:
        for i, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(None, 1)
            p = parts[0]
            if not os.path.isabs(p):
                p = os.path.join(base, p)
            paths.append(p)
            labels.append(parts[1].strip() if len(parts) > 1 else f"run{i-1}")
    return paths, labels


def load_run_set(paths, clock_name: str, alignment: str = "truncate-to-min",
                 labels=None) -> RunSet:
    """Parse and resample several dumps of the same design into a RunSet."""
    if alignment not in ("truncate-to-min", "error-on-mismatch"):
        raise ValueError(f"unknown alignment policy '{alignment}'")
    paths = list(paths)
    if len(paths) < 2:
        raise ValueError(f"need at least 2 runs, got {len(paths)}")
    if labels is None:
        labels = [str(p) for p in paths]

    dumps = [load_vcd_file(p) for p in paths]
    first = dumps[0]
    for p, d in zip(paths[1:], dumps[1:]):
        if d.declarations != first.declarations or not _tree_equal(d.hierarchy, first.hierarchy):
            raise ValueError(f"hierarchy mismatch: '{p}' does not match '{paths[0]}'")

    matrices = [resample_per_cycle(d, clock_name) for d in dumps]
    lengths = [m.n_cycles for m in matrices]
    if alignment == "error-on-mismatch" and len(set(lengths)) > 1:
        raise ValueError(f"run lengths differ: {lengths}")
    d_min = min(lengths)
    matrices = [m.truncated(d_min) for m in matrices]

    return RunSet(
        runs=matrices,
        n_cycles=d_min,
        signal_order=[s.id_code for s in first.declarations],
        hierarchy=first.hierarchy,
        declarations=first.declarations,
        labels=list(labels),
    )
