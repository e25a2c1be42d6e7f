"""Architecture genomes: definition, sampling, validation, text encoding.

Two genome families exist.  Choice-block genomes pick one or two distinct
operations out of six for every block, giving 6 + 6*5/2 = 21 combinations
per block.  TDNN genomes pick one temporal context window per frame-level
layer out of {t}, {t-1,t,t+1}, {t-2,t,t+2}, {t-3,t,t+3}.
"""

import enum
import itertools
from dataclasses import dataclass, field

from evonas.errors import GenomeParseError

N_OPS = 6


class OpKind(enum.Enum):
    """The candidate operations a choice block may apply."""

    MAX_POOL = "maxpool"
    IDENTITY = "identity"
    CONV1X1 = "conv1x1"
    CONV3X3 = "conv3x3"
    CONV5X5 = "conv5x5"
    CONV7X7 = "conv7x7"


_OP_BY_NAME = {op.value: op for op in OpKind}


def _canon(ops):
    return tuple(sorted(ops, key=lambda o: o.value))


@dataclass(frozen=True, eq=False)
class BlockGene:
    """The 1- or 2-element operation set chosen for one block."""

    ops: tuple

    def canonical_ops(self):
        return _canon(self.ops)

    def __eq__(self, other):
        if not isinstance(other, BlockGene):
            return NotImplemented
        return self.canonical_ops() == other.canonical_ops()

    def __hash__(self):
        return hash(self.canonical_ops())


class Mode(enum.Enum):
    AUTO_VECTOR = "auto_vector"
    TDNN_XVECTOR = "tdnn_xvector"


@dataclass(frozen=True, eq=False)
class Genome:
    """One architecture choice: per-block op sets or per-layer windows."""

    mode: Mode
    blocks: tuple = ()
    windows: tuple = ()

    def _key(self):
        if self.mode is Mode.AUTO_VECTOR:
            return (self.mode, tuple(b.canonical_ops() for b in self.blocks))
        return (self.mode, tuple(self.windows))

    def __eq__(self, other):
        if not isinstance(other, Genome):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    def __repr__(self):
        return f"Genome({encode(self)})"


def combos_per_block(n_op):
    """Number of 1- or 2-element subsets of n_op operations."""
    return n_op + n_op * (n_op - 1) // 2


def space_size(n_blocks, n_op=N_OPS):
    """Exact number of genomes (python big integer)."""
    return combos_per_block(n_op) ** n_blocks


def all_block_combos(ops=tuple(OpKind)):
    """The canonical enumeration of per-block choices: singles then pairs."""
    ordered = _canon(ops)
    singles = [(op,) for op in ordered]
    pairs = list(itertools.combinations(ordered, 2))
    return singles + pairs


ALL_COMBOS = all_block_combos()


@dataclass(frozen=True)
class SearchSpace:
    """Fixed dimensions of the genome space for one hyper-network."""

    mode: Mode = Mode.AUTO_VECTOR
    n_blocks: int = 24
    n_layers: int = 5
    window_choices: tuple = (0, 1, 2, 3)
    combos: tuple = field(default=tuple(ALL_COMBOS), repr=False)

    def size(self):
        if self.mode is Mode.AUTO_VECTOR:
            return len(self.combos) ** self.n_blocks
        return len(self.window_choices) ** self.n_layers

    @property
    def n_slots(self):
        return self.n_blocks if self.mode is Mode.AUTO_VECTOR else self.n_layers

    def uniform_sample(self, rng):
        """Draw a genome with every slot uniform over its choices."""
        if self.mode is Mode.AUTO_VECTOR:
            idx = rng.integers(0, len(self.combos), size=self.n_blocks)
            blocks = tuple(BlockGene(self.combos[i]) for i in idx)
            return Genome(Mode.AUTO_VECTOR, blocks=blocks)
        idx = rng.integers(0, len(self.window_choices), size=self.n_layers)
        return Genome(Mode.TDNN_XVECTOR,
                      windows=tuple(self.window_choices[i] for i in idx))

    def redraw_slot(self, genome, slot, rng):
        """A copy of ``genome`` with one slot redrawn, guaranteed different."""
        if self.mode is Mode.AUTO_VECTOR:
            current = genome.blocks[slot].canonical_ops()
            others = [c for c in self.combos if c != current]
            pick = others[int(rng.integers(0, len(others)))]
            blocks = list(genome.blocks)
            blocks[slot] = BlockGene(pick)
            return Genome(Mode.AUTO_VECTOR, blocks=tuple(blocks))
        current = genome.windows[slot]
        others = [w for w in self.window_choices if w != current]
        pick = others[int(rng.integers(0, len(others)))]
        windows = list(genome.windows)
        windows[slot] = pick
        return Genome(Mode.TDNN_XVECTOR, windows=tuple(windows))

    def validate(self, genome):
        """Violation messages for ``genome`` against this space; [] if ok."""
        violations = []
        if genome.mode is not self.mode:
            violations.append(
                f"mode mismatch: expected {self.mode.value}, got {genome.mode.value}")
            return violations
        if self.mode is Mode.AUTO_VECTOR:
            if len(genome.blocks) != self.n_blocks:
                violations.append(
                    f"wrong block count: expected {self.n_blocks}, "
                    f"got {len(genome.blocks)}")
            for i, gene in enumerate(genome.blocks):
                n = len(gene.ops)
                if n not in (1, 2):
                    violations.append(f"block {i} has {n} ops, expected 1 or 2")
                if len(set(gene.ops)) != n:
                    violations.append(f"non-distinct ops at block {i}")
                for op in gene.ops:
                    if not isinstance(op, OpKind):
                        violations.append(f"unknown op {op!r} at block {i}")
        else:
            if len(genome.windows) != self.n_layers:
                violations.append(
                    f"wrong layer count: expected {self.n_layers}, "
                    f"got {len(genome.windows)}")
            for i, w in enumerate(genome.windows):
                if w not in self.window_choices:
                    violations.append(
                        f"window half-width {w} at layer {i} not in "
                        f"{self.window_choices}")
        return violations


def encode(genome):
    """Canonical text form: ops sorted inside blocks; stable across runs."""
    if genome.mode is Mode.AUTO_VECTOR:
        segments = []
        for i, gene in enumerate(genome.blocks):
            names = ",".join(op.value for op in gene.canonical_ops())
            segments.append(f"B{i}:{{{names}}}")
        return ";".join(segments)
    segments = []
    for i, w in enumerate(genome.windows):
        taps = "t" if w == 0 else f"t-{w},t,t+{w}"
        segments.append(f"L{i}:{{{taps}}}")
    return ";".join(segments)


def _parse_segment(segment, index, offset):
    head, sep, body = segment.partition(":{")
    if not sep or not body.endswith("}"):
        raise GenomeParseError(f"segment {segment!r} is not NAME:{{...}}", offset)
    if head not in (f"B{index}", f"L{index}"):
        raise GenomeParseError(
            f"expected segment B{index} or L{index}, got {head!r}", offset)
    return head[0], body[:-1]


def decode(text):
    """Parse the canonical text form back into a Genome."""
    if not text:
        raise GenomeParseError("empty genome text", 0)
    segments = text.split(";")
    kinds = []
    bodies = []
    offset = 0
    for i, segment in enumerate(segments):
        kind, body = _parse_segment(segment, i, offset)
        kinds.append(kind)
        bodies.append((body, offset + len(f"{kind}{i}:{{")))
        offset += len(segment) + 1
    if len(set(kinds)) != 1:
        raise GenomeParseError("mixed B and L segments", 0)
    if kinds[0] == "B":
        blocks = []
        for body, body_offset in bodies:
            ops = []
            pos = body_offset
            for name in body.split(","):
                op = _OP_BY_NAME.get(name)
                if op is None:
                    raise GenomeParseError(f"unknown op name {name!r}", pos)
                ops.append(op)
                pos += len(name) + 1
            blocks.append(BlockGene(tuple(ops)))
        return Genome(Mode.AUTO_VECTOR, blocks=tuple(blocks))
    windows = []
    for body, body_offset in bodies:
        taps = body.split(",")
        if taps == ["t"]:
            windows.append(0)
            continue
        if len(taps) == 3 and taps[1] == "t" and taps[0].startswith("t-") \
                and taps[2].startswith("t+"):
            try:
                left = int(taps[0][2:])
                right = int(taps[2][2:])
            except ValueError:
                raise GenomeParseError(f"bad window {body!r}", body_offset)
            if left == right and left > 0:
                windows.append(left)
                continue
        raise GenomeParseError(f"bad window {body!r}", body_offset)
    return Genome(Mode.TDNN_XVECTOR, windows=tuple(windows))


def splice_offsets(window):
    """Frame offsets a TDNN layer splices for a window half-width."""
    if window == 0:
        return (0,)
    return (-window, 0, window)
