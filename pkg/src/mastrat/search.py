"""Swarm search for minimum-aberration multi-stratum designs.

Discrete particle-swarm (SIB-style) drivers: particles are generator fills
for regular designs or unit-to-run assignments for nonregular designs.
Each iteration MIXes a particle toward the global best, its local best,
and fresh pool draws, then MOVEs to the best of candidate / current /
local best, with a random perturbation to escape stagnation.
"""

from __future__ import annotations

import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Sequence

import numpy as np

from .aberration import WordlengthTable, table_from_counts
from .blocks import BlockStructure, strata_projectors
from .keys import (
    ExhaustedRetriesError,
    GeneratorSet,
    KeyTemplate,
    PoolMatrix,
    StratumClassifier,
    random_generator_set,
)


class InvalidQError(ValueError):
    pass


class EmptyCandidateSetError(RuntimeError):
    """All addition candidates are excluded by the constraints."""


class SpaceTooLargeError(ValueError):
    """Exhaustive enumeration refused: search space above the cap."""


@dataclass(frozen=True)
class QVector:
    """Substitution counts toward GB, LB, and fresh draws.

    Each field is a scalar total or a per-pool mapping (regular mode).
    """

    q_gb: int | Mapping[str, int]
    q_lb: int | Mapping[str, int]
    q_new: int | Mapping[str, int]

    def totals(self) -> tuple[int, int, int]:
        def tot(v):
            return v if isinstance(v, int) else sum(v.values())

        return tot(self.q_gb), tot(self.q_lb), tot(self.q_new)

    def validate(self, slot_count: int | None = None) -> None:
        gb, lb, new = self.totals()
        if min(gb, lb, new) < 0:
            raise InvalidQError("q values must be nonnegative")
        if slot_count is not None and gb + lb + new > slot_count:
            raise InvalidQError(
                f"q total {gb + lb + new} exceeds the {slot_count} positions"
            )
        if not (new >= gb >= lb):
            warnings.warn(
                "suggested ordering q_new >= q_gb >= q_lb not met",
                stacklevel=2,
            )

    def per_pool(
        self, template: KeyTemplate, rng: np.random.Generator
    ) -> dict[str, tuple[int, int, int]]:
        """Resolve to per-pool (gb, lb, new) counts, bounded by slot counts."""
        keys = template.pool_keys()
        sizes = {k: len(template.slot_indices(k)) for k in keys}
        out = {k: [0, 0, 0] for k in keys}
        for j, q in enumerate((self.q_gb, self.q_lb, self.q_new)):
            if isinstance(q, int):
                # Scalar totals are spread over randomly chosen free positions.
                free = [
                    k
                    for k in keys
                    for _ in range(sizes[k] - sum(out[k]))
                ]
                take = min(q, len(free))
                for k in rng.choice(len(free), size=take, replace=False) if take else []:
                    out[free[int(k)]][j] += 1
            else:
                for k, v in q.items():
                    if k not in sizes:
                        raise InvalidQError(f"unknown pool {k!r} in q")
                    if v > sizes[k]:
                        raise InvalidQError(
                            f"q for pool {k!r} exceeds its {sizes[k]} positions"
                        )
                    out[k][j] = v
        return {k: tuple(v) for k, v in out.items()}


# ---------------------------------------------------------------------
# Regular designs (Algorithm 3)
# ---------------------------------------------------------------------


class RegularEvaluator:
    """Criterion vectors for generator fills, vectorized over all effects."""

    def __init__(self, template: KeyTemplate, sequence: Sequence[Sequence[str]]):
        self.template = template
        self.sequence = [tuple(g) for g in sequence]
        b = template.structure
        self.n_strata = len(b.names)
        self.lookup = StratumClassifier(template).lookup_table()
        effects = np.arange(1 << template.n, dtype=np.int64)
        lengths = np.zeros(1 << template.n, dtype=np.int64)
        for f in range(template.n):
            lengths += (effects >> f) & 1
        self._bucket = lengths - 1  # length-1 bucket per effect
        self._effects = effects
        self._g_indices = [
            tuple(b.index(nm) for nm in g) for g in self.sequence
        ]
        self._memo: dict[tuple[int, ...], tuple[int, ...]] = {}

    def counts(self, fills: tuple[int, ...]) -> np.ndarray:
        """(n, n_strata) matrix of length-k effect counts per stratum."""
        gs = GeneratorSet(self.template, fills)
        masks = gs.alias_masks
        alias = np.zeros(1 << self.template.n, dtype=np.int64)
        for f in range(self.template.n):
            alias ^= ((self._effects >> f) & 1) * masks[f]
        strata = self.lookup[alias]
        flat = np.bincount(
            (strata + self.n_strata * self._bucket)[1:],
            minlength=self.n_strata * self.template.n,
        )
        return flat.reshape(self.template.n, self.n_strata)

    def value(self, fills: tuple[int, ...]) -> tuple[int, ...]:
        hit = self._memo.get(fills)
        if hit is not None:
            return hit
        c = self.counts(fills)
        out: list[int] = []
        for g in self._g_indices:
            seg = c[:, list(g)].sum(axis=1)
            out.extend(int(v) for v in seg)
        val = tuple(out)
        self._memo[fills] = val
        return val

    def table(self, fills: tuple[int, ...]) -> WordlengthTable:
        c = self.counts(fills)
        counts = {
            nm: [int(c[k, i]) for k in range(self.template.n)]
            for i, nm in enumerate(self.template.structure.names)
        }
        return table_from_counts(
            self.template.structure, self.template.n, counts
        )


@dataclass
class RegularParticle:
    fills: tuple[int, ...]
    value: tuple[int, ...]
    lb_fills: tuple[int, ...] = ()
    lb_value: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if not self.lb_fills:
            self.lb_fills, self.lb_value = self.fills, self.value


def mix_regular(
    x: RegularParticle,
    gb: RegularParticle,
    lb: RegularParticle,
    template: KeyTemplate,
    pools: Mapping[str, PoolMatrix],
    q: QVector,
    evaluator: RegularEvaluator,
    rng: np.random.Generator,
    max_retries: int = 100,
) -> RegularParticle:
    """Three-source position swaps: GB fills, LB fills, then fresh draws."""
    plan = q.per_pool(template, rng)
    for _ in range(max_retries):
        fills = list(x.fills)
        for key, (n_gb, n_lb, n_new) in plan.items():
            idx = template.slot_indices(key)
            total = n_gb + n_lb + n_new
            if total == 0:
                continue
            chosen = rng.choice(len(idx), size=min(total, len(idx)), replace=False)
            positions = [idx[int(i)] for i in chosen]
            for j, pos in enumerate(positions):
                if j < n_gb:
                    fills[pos] = gb.fills[pos]
                elif j < n_gb + n_lb:
                    fills[pos] = lb.fills[pos]
                else:
                    pool = pools[key]
                    fills[pos] = int(pool.rows[rng.integers(len(pool.rows))])
        cand = tuple(fills)
        gs = GeneratorSet(template, cand)
        if gs.is_invertible():
            return RegularParticle(cand, evaluator.value(cand))
    raise ExhaustedRetriesError("MIX could not produce an invertible key")


def compare_values(a: Sequence, b: Sequence) -> int:
    if len(a) != len(b):
        raise ValueError("criterion vectors of different length")
    if tuple(a) < tuple(b):
        return -1
    if tuple(a) > tuple(b):
        return 1
    return 0


def move(
    candidate,
    current,
    local_best,
    perturb: Callable[[object], object] | None = None,
):
    """Pick the best of the three; perturb when the candidate trails both.

    Ties prefer the incumbent: current first, then the local best, so a
    particle never drifts on equal criteria.
    """
    c_cur = compare_values(candidate.value, current.value)
    c_lb = compare_values(candidate.value, local_best.value)
    if c_cur > 0 and c_lb > 0 and perturb is not None:
        return perturb(current)
    best = current
    if compare_values(local_best.value, best.value) < 0:
        best = local_best
    if compare_values(candidate.value, best.value) < 0:
        best = candidate
    return best


@dataclass
class SearchResult:
    kind: str
    best: tuple
    value: tuple
    table: WordlengthTable
    report_subsets: list[tuple[str, ...]]
    co_optimal: list[tuple]
    trace: list[tuple[int, tuple]]
    metadata: dict


def run_algorithm3(
    template: KeyTemplate,
    pools: Mapping[str, PoolMatrix],
    sequence: Sequence[Sequence[str]],
    S: int,
    T: int,
    q: QVector,
    seed: int,
    threads: int = 1,
    distinct_within_stratum: bool = False,
    max_retries: int = 100,
    polish: bool = True,
) -> SearchResult:
    """SIB driver for regular multi-stratum designs.

    With ``polish`` enabled, every new global best is refined by
    coordinate descent over the generator slots before being adopted.
    """
    if S < 1 or T < 1:
        raise ValueError("S and T must be at least 1")
    q.validate(len(template.slots))
    start = time.monotonic()
    evaluator = RegularEvaluator(template, sequence)

    def refine(p: RegularParticle) -> RegularParticle:
        if not polish:
            return p
        fills, value = list(p.fills), p.value
        improved = True
        while improved:
            improved = False
            for pos, slot in enumerate(template.slots):
                cur = fills[pos]
                for r in pools[slot.pool_key].rows:
                    if int(r) == cur:
                        continue
                    fills[pos] = int(r)
                    cand = tuple(fills)
                    if not GeneratorSet(template, cand).is_invertible():
                        continue
                    v = evaluator.value(cand)
                    if v < value:
                        value, cur, improved = v, int(r), True
                fills[pos] = cur
        return RegularParticle(tuple(fills), value)

    streams = [
        np.random.default_rng(s)
        for s in np.random.SeedSequence(seed).spawn(S)
    ]
    particles: list[RegularParticle] = []
    for rng in streams:
        gs = random_generator_set(
            template, pools, rng, max_retries, distinct_within_stratum
        )
        particles.append(RegularParticle(gs.fills, evaluator.value(gs.fills)))
    gb = min(particles, key=lambda p: p.value)
    gb = refine(RegularParticle(gb.fills, gb.value))
    co_optimal: dict[tuple[int, ...], None] = {gb.fills: None}
    trace: list[tuple[int, tuple]] = [(1, gb.value)]

    def perturber(rng: np.random.Generator):
        def perturb(p: RegularParticle) -> RegularParticle:
            _, _, n_new = q.totals()
            fills = list(p.fills)
            for _ in range(max_retries):
                take = min(max(n_new, 1), len(fills))
                for pos in rng.choice(len(fills), size=take, replace=False):
                    pool = pools[template.slots[int(pos)].pool_key]
                    fills[int(pos)] = int(
                        pool.rows[rng.integers(len(pool.rows))]
                    )
                cand = tuple(fills)
                if GeneratorSet(template, cand).is_invertible():
                    return RegularParticle(cand, evaluator.value(cand))
                fills = list(p.fills)
            raise ExhaustedRetriesError("perturbation failed to keep K invertible")

        return perturb

    def step(j: int) -> None:
        rng = streams[j]
        p = particles[j]
        lb = RegularParticle(p.lb_fills, p.lb_value)
        cand = mix_regular(
            p, gb, lb, template, pools, q, evaluator, rng, max_retries
        )
        new = move(cand, p, lb, perturber(rng))
        p.fills, p.value = new.fills, new.value
        if compare_values(p.value, p.lb_value) < 0:
            p.lb_fills, p.lb_value = p.fills, p.value

    for t in range(2, T + 1):
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as ex:
                list(ex.map(step, range(S)))
        else:
            for j in range(S):
                step(j)
        best = min(particles, key=lambda p: p.lb_value)
        if compare_values(best.lb_value, gb.value) < 0:
            gb = refine(RegularParticle(best.lb_fills, best.lb_value))
            co_optimal = {gb.fills: None}
        for p in particles:
            if p.lb_value == gb.value:
                co_optimal[p.lb_fills] = None
        trace.append((t, gb.value))

    table = evaluator.table(gb.fills)
    return SearchResult(
        kind="regular",
        best=gb.fills,
        value=gb.value,
        table=table,
        report_subsets=[tuple(g) for g in sequence],
        co_optimal=list(co_optimal),
        trace=trace,
        metadata={
            "seed": seed,
            "S": S,
            "T": T,
            "q": q.totals(),
            "wall_time": time.monotonic() - start,
        },
    )


def oracle_regular(
    template: KeyTemplate,
    pools: Mapping[str, PoolMatrix],
    sequence: Sequence[Sequence[str]],
    cap: int = 10**6,
) -> tuple[tuple[int, ...], tuple[int, ...], int]:
    """Exhaustive minimum over all pool combinations.

    Returns (best fills, best value, number of co-optimal combinations).
    """
    sizes = [len(pools[s.pool_key].rows) for s in template.slots]
    space = 1
    for s in sizes:
        space *= s
    if space > cap:
        raise SpaceTooLargeError(f"search space has {space} combinations")
    evaluator = RegularEvaluator(template, sequence)
    best_fills: tuple[int, ...] | None = None
    best_value: tuple[int, ...] | None = None
    ties = 0
    idx = [0] * len(sizes)
    while True:
        fills = tuple(
            int(pools[s.pool_key].rows[i])
            for s, i in zip(template.slots, idx)
        )
        gs = GeneratorSet(template, fills)
        if gs.is_invertible():
            v = evaluator.value(fills)
            if best_value is None or v < best_value:
                best_fills, best_value, ties = fills, v, 1
            elif v == best_value:
                ties += 1
        pos = len(sizes) - 1
        while pos >= 0:
            idx[pos] += 1
            if idx[pos] < sizes[pos]:
                break
            idx[pos] = 0
            pos -= 1
        if pos < 0:
            break
    if best_value is None:
        raise ExhaustedRetriesError("no invertible key in the search space")
    return best_fills, best_value, ties


# ---------------------------------------------------------------------
# Nonregular designs (Algorithm 4)
# ---------------------------------------------------------------------


class NonregularProblem:
    """Assignment-based search space for nonregular designs.

    Each particle assigns one pool row (a treatment combination packed as
    a bitmask, bit=1 meaning level -1) to every search slot.  In direct
    mode a slot is a unit; in crossed mode a slot is one sub-design run
    replicated across a whole class of units (e.g. a column of a
    strip-plot), with the other axis held fixed.
    """

    def __init__(
        self,
        structure: BlockStructure,
        n: int,
        pool: Sequence[int],
        slot_units: Sequence[Sequence[int]] | None = None,
        slot_run: Callable[[int, int], int] | None = None,
        constraints: Sequence[Callable[[int], bool]] = (),
        distinct: bool = False,
        fraction_size: int | None = None,
    ):
        self.structure = structure
        self.n = n
        self.constraints = list(constraints)
        self.distinct = distinct
        # Word counts are reported as sums of squared class totals over
        # N * fraction_size, where fraction_size is the run size of the
        # unreplicated regular fraction the design is benchmarked against
        # (2^(n-l0)).  For power-of-two designs this equals N and the
        # formula reduces to the usual 1/N^2 normalization.
        self.fraction_size = fraction_size if fraction_size else structure.N
        self.pool = [
            r for r in pool if all(ok(r) for ok in self.constraints)
        ]
        if not self.pool:
            raise EmptyCandidateSetError("constraints exclude the whole pool")
        N = structure.N
        self.slot_units = (
            [list(s) for s in slot_units]
            if slot_units is not None
            else [[u] for u in range(N)]
        )
        self.direct = all(
            len(s) == 1 and s[0] == i for i, s in enumerate(self.slot_units)
        )
        # Full-design run for slot value v at unit u (crossed mode merges
        # the fixed sub-design into the searched one).
        self.slot_run = slot_run or (lambda u, v: v)
        self.n_slots = len(self.slot_units)
        sd = strata_projectors(structure)
        self.names = structure.names
        self.mobius = sd.mobius
        self.classes = {
            nm: np.array(structure.factor(nm).classes, dtype=np.int64)
            for nm in self.names
        }
        self.n_classes = {
            nm: structure.factor(nm).n_classes for nm in self.names
        }
        # chi[r, S] = product of the +/-1 levels of run r over effect S.
        runs = np.arange(1 << n, dtype=np.int64)
        effects = np.arange(1 << n, dtype=np.int64)
        overlap = np.zeros((1 << n, 1 << n), dtype=np.int64)
        for f in range(n):
            overlap += np.outer((runs >> f) & 1, (effects >> f) & 1)
        self.chi = (1 - 2 * (overlap & 1)).astype(np.float64)
        self.chi_int = self.chi.astype(np.int64)
        lengths = np.zeros(1 << n, dtype=np.int64)
        for f in range(n):
            lengths += (effects >> f) & 1
        # kmat[S, k-1] marks the order-k effects; dotting a per-effect
        # vector with it yields the wordlength pattern.
        self.kmat = np.zeros((1 << n, n))
        self.kmat[np.arange(1 << n)[1:], lengths[1:] - 1] = 1.0
        self.k_index = [np.nonzero(lengths == k)[0] for k in range(n + 1)]
        self.sequence: list[tuple[str, ...]] = [("U",)]
        self._seq_weights: list[dict[str, float]] = []
        self.set_sequence(self.sequence)

    def set_sequence(self, sequence: Sequence[Sequence[str]]) -> None:
        self.sequence = [tuple(g) for g in sequence]
        self._seq_weights = []
        for gset in self.sequence:
            w = {}
            for nm in self.names:
                total = sum(
                    self.mobius.get((f, nm), 0) for f in gset
                )
                if total:
                    w[nm] = float(total)
            self._seq_weights.append(w)

    def admissible(self, run: int) -> bool:
        return all(ok(run) for ok in self.constraints)

    def design_rows(self, assignment: Sequence[int]) -> np.ndarray:
        """Full +/-1 design table in unit order."""
        N = self.structure.N
        out = np.empty((N, self.n), dtype=np.int64)
        for s, v in enumerate(assignment):
            for u in self.slot_units[s]:
                r = self.slot_run(u, v)
                out[u] = 1 - 2 * ((r >> np.arange(self.n)) & 1)
        return out

    def exact_value(self, assignment: Sequence[int]) -> tuple[Fraction, ...]:
        """Exact W_G concatenation for a full assignment."""
        N = self.structure.N
        units: list[int] = []
        runs: list[int] = []
        for s, v in enumerate(assignment):
            for u in self.slot_units[s]:
                units.append(u)
                runs.append(self.slot_run(u, v))
        chi_rows = self.chi_int[np.array(runs, dtype=np.int64)]
        order = np.array(units, dtype=np.int64)
        sums_sq = {}
        for nm in self.names:
            cls = self.classes[nm][order]
            nc = self.n_classes[nm]
            sums = np.zeros((nc, 1 << self.n), dtype=np.int64)
            np.add.at(sums, cls, chi_rows)
            sums_sq[nm] = (sums * sums).sum(axis=0)
        out: list[Fraction] = []
        for gset in self.sequence:
            total = np.zeros(1 << self.n, dtype=np.int64)
            for f in gset:
                for g in self.names:
                    mu = self.mobius.get((f, g))
                    if mu:
                        total += mu * self.n_classes[g] * sums_sq[g]
            for k in range(1, self.n + 1):
                out.append(
                    Fraction(
                        int(total[self.k_index[k]].sum()),
                        N * self.fraction_size,
                    )
                )
        return tuple(out)

    def table(self, assignment: Sequence[int]) -> WordlengthTable:
        from .aberration import compute_Bki_matrix

        sd = strata_projectors(self.structure)
        tbl = compute_Bki_matrix(self.design_rows(assignment), sd)
        if self.fraction_size != self.structure.N:
            scale = Fraction(self.structure.N, self.fraction_size)
            tbl = WordlengthTable(
                tbl.structure,
                tbl.n,
                tuple(tuple(v * scale for v in row) for row in tbl.b),
            )
        return tbl


class _PartialState:
    """Incremental per-class sums for greedy MIX steps.

    Tracks, per unit factor, the class sums of every effect column over
    the currently assigned slots, and scores partial designs with
    per-class averaging so unequal class sizes are handled.
    """

    def __init__(self, problem: NonregularProblem, assignment: Sequence[int | None]):
        self.p = problem
        self.values: list[int | None] = list(assignment)
        p = problem
        self.sums = {
            nm: np.zeros((p.n_classes[nm], 1 << p.n))
            for nm in p.names
        }
        self.counts = {
            nm: np.zeros(p.n_classes[nm], dtype=np.int64) for nm in p.names
        }
        for s, v in enumerate(self.values):
            if v is not None:
                self._apply(s, v, +1)

    def _apply(self, slot: int, value: int, sign: int) -> None:
        p = self.p
        for u in p.slot_units[slot]:
            row = p.chi[p.slot_run(u, value)]
            for nm in p.names:
                c = p.classes[nm][u]
                self.sums[nm][c] += sign * row
                self.counts[nm][c] += sign

    def set(self, slot: int, value: int | None) -> None:
        old = self.values[slot]
        if old is not None:
            self._apply(slot, old, -1)
        self.values[slot] = value
        if value is not None:
            self._apply(slot, value, +1)

    def _comp(self, nm: str) -> np.ndarray:
        s, c = self.sums[nm], self.counts[nm]
        nz = c > 0
        if not nz.any():
            return np.zeros(1 << self.p.n)
        return ((s[nz] * s[nz]) / c[nz, None]).sum(axis=0)

    def score(self) -> np.ndarray:
        p = self.p
        comps = {nm: self._comp(nm) for nm in p.names}
        segs = []
        for w in p._seq_weights:
            vec = np.zeros(1 << p.n)
            for nm, wt in w.items():
                vec += wt * comps[nm]
            segs.append(vec @ p.kmat)
        return np.concatenate(segs)

    # -- batched one-slot what-if scores (direct mode fast path) --------

    def _delta_scores(
        self, units: np.ndarray, rows: np.ndarray, sign: int
    ) -> np.ndarray:
        """Score changes when adding (sign=+1) or removing (sign=-1) one
        run per candidate; units/rows give each candidate's unit and chi row."""
        p = self.p
        m = len(units)
        deltas = {nm: np.zeros((m, 1 << p.n)) for nm in p.names}
        for nm in p.names:
            cls = p.classes[nm][units]
            s = self.sums[nm][cls]
            c = self.counts[nm][cls].astype(np.float64)
            new_s = s + sign * rows
            new_c = c + sign
            old_term = np.where(c[:, None] > 0, (s * s) / np.maximum(c, 1)[:, None], 0.0)
            new_term = np.where(
                new_c[:, None] > 0,
                (new_s * new_s) / np.maximum(new_c, 1)[:, None],
                0.0,
            )
            deltas[nm] = new_term - old_term
        out = []
        for w in p._seq_weights:
            vec = np.zeros((m, 1 << p.n))
            for nm, wt in w.items():
                vec += wt * deltas[nm]
            out.append(vec @ p.kmat)
        return np.concatenate(out, axis=1)

    def best_removal(
        self, slots: Sequence[int], rng: np.random.Generator | None = None
    ) -> int:
        """Slot whose removal leaves the best-scoring partial design."""
        p = self.p
        if p.direct:
            units = np.array(slots, dtype=np.int64)
            rows = p.chi[
                np.array([p.slot_run(s, self.values[s]) for s in slots])
            ]
            scores = self._delta_scores(units, rows, -1)
            return slots[_lex_argmin(scores, rng)]
        scores = []
        for s in slots:
            v = self.values[s]
            self.set(s, None)
            scores.append(self.score())
            self.set(s, v)
        return slots[_lex_argmin(np.array(scores), rng)]

    def best_addition(
        self,
        slots: Sequence[int],
        runs: Sequence[int],
        rng: np.random.Generator | None = None,
    ) -> tuple[int, int]:
        """(slot, run) pair whose addition scores best."""
        p = self.p
        if p.direct:
            su = np.repeat(np.array(slots, dtype=np.int64), len(runs))
            rr = np.tile(np.array(runs, dtype=np.int64), len(slots))
            rows = p.chi[rr]
            scores = self._delta_scores(su, rows, +1)
            i = _lex_argmin(scores, rng)
            return int(su[i]), int(rr[i])
        pairs = [(s, r) for s in slots for r in runs]
        scores = []
        for s, r in pairs:
            self.set(s, r)
            scores.append(self.score())
            self.set(s, None)
        return pairs[_lex_argmin(np.array(scores), rng)]


def _lex_argmin(
    scores: np.ndarray, rng: np.random.Generator | None = None
) -> int:
    """Row of the lexicographically smallest score vector.

    Near-exact ties (within rounding noise) are broken at random when an
    rng is supplied, so greedy steps do not always favor low indices.
    """
    rounded = np.round(scores, 9)
    keys = tuple(rounded[:, j] for j in range(rounded.shape[1] - 1, -1, -1))
    order = np.lexsort(keys)
    if rng is None:
        return int(order[0])
    best = rounded[order[0]]
    ties = np.nonzero((rounded == best).all(axis=1))[0]
    return int(ties[rng.integers(len(ties))])


@dataclass
class NonregularParticle:
    assignment: tuple[int, ...]
    value: tuple[Fraction, ...]
    lb_assignment: tuple[int, ...] = ()
    lb_value: tuple[Fraction, ...] = ()

    def __post_init__(self) -> None:
        if not self.lb_assignment:
            self.lb_assignment, self.lb_value = self.assignment, self.value


def mix_nonregular(
    x: NonregularParticle,
    gb: NonregularParticle,
    lb: NonregularParticle,
    problem: NonregularProblem,
    q: QVector,
    rng: np.random.Generator,
) -> NonregularParticle:
    """Per-source MIX: for GB, LB, then the pool, greedily delete q_i runs
    and greedily refill them from that source."""
    n_gb, n_lb, n_new = q.totals()
    if n_gb + n_lb + n_new > problem.n_slots:
        raise InvalidQError("q total exceeds the number of runs")
    if n_gb + n_lb + n_new == 0:
        return NonregularParticle(x.assignment, x.value)
    state = _PartialState(problem, x.assignment)
    # The third source is the whole run pool; randomized tie-breaking in
    # the greedy steps keeps that phase stochastic.
    # Exploration first, exploitation last: the GB phase repairs whatever
    # the pool-wide NEW phase disturbed.
    for source, cnt in (
        (list(problem.pool), n_new),
        (list(lb.assignment), n_lb),
        (list(gb.assignment), n_gb),
    ):
        if cnt == 0:
            continue
        emptied: list[int] = []
        for _ in range(cnt):
            live = [s for s, v in enumerate(state.values) if v is not None]
            if len(live) <= 1:
                break
            s = state.best_removal(live, rng)
            state.set(s, None)
            emptied.append(s)
        runs = sorted({r for r in source if problem.admissible(r)})
        for _ in range(len(emptied)):
            empty = [s for s in emptied if state.values[s] is None]
            options = runs
            if problem.distinct:
                used = {v for v in state.values if v is not None}
                options = [r for r in runs if r not in used]
            if not options:
                options = sorted(
                    r
                    for r in problem.pool
                    if r not in {v for v in state.values if v is not None}
                ) if problem.distinct else list(problem.pool)
            if not options:
                raise EmptyCandidateSetError(
                    "no admissible candidate runs for the addition step"
                )
            s, r = state.best_addition(empty, options, rng)
            state.set(s, r)
    final = tuple(v for v in state.values)
    if any(v is None for v in final):
        raise EmptyCandidateSetError("addition step left empty slots")
    return NonregularParticle(final, problem.exact_value(final))


def _random_assignment(
    problem: NonregularProblem, rng: np.random.Generator
) -> tuple[int, ...]:
    pool = problem.pool
    if problem.distinct:
        if len(pool) < problem.n_slots:
            raise EmptyCandidateSetError("pool smaller than the design")
        picks = rng.choice(len(pool), size=problem.n_slots, replace=False)
    else:
        picks = rng.integers(len(pool), size=problem.n_slots)
    return tuple(int(pool[int(i)]) for i in picks)


def run_algorithm4(
    problem: NonregularProblem,
    sequence: Sequence[Sequence[str]],
    S: int,
    T: int,
    q: QVector,
    seed: int,
    threads: int = 1,
) -> SearchResult:
    """SIB driver for nonregular multi-stratum designs."""
    if S < 1 or T < 1:
        raise ValueError("S and T must be at least 1")
    q.validate(problem.n_slots)
    problem.set_sequence(sequence)
    start = time.monotonic()
    streams = [
        np.random.default_rng(s)
        for s in np.random.SeedSequence(seed).spawn(S)
    ]
    particles = []
    for rng in streams:
        a = _random_assignment(problem, rng)
        particles.append(NonregularParticle(a, problem.exact_value(a)))
    gb = min(particles, key=lambda p: p.value)
    gb = NonregularParticle(gb.assignment, gb.value)
    co_optimal: dict[tuple[int, ...], None] = {gb.assignment: None}
    trace: list[tuple[int, tuple]] = [(1, gb.value)]

    def perturber(rng: np.random.Generator):
        def perturb(p: NonregularParticle) -> NonregularParticle:
            _, _, n_new = q.totals()
            a = list(p.assignment)
            take = min(max(n_new, 1), len(a))
            pool = problem.pool
            for pos in rng.choice(len(a), size=take, replace=False):
                if problem.distinct:
                    used = set(a)
                    options = [r for r in pool if r not in used]
                    if not options:
                        continue
                else:
                    options = pool
                a[int(pos)] = int(options[rng.integers(len(options))])
            cand = tuple(a)
            return NonregularParticle(cand, problem.exact_value(cand))

        return perturb

    def step(j: int) -> None:
        rng = streams[j]
        p = particles[j]
        lb = NonregularParticle(p.lb_assignment, p.lb_value)
        cand = mix_nonregular(p, gb, lb, problem, q, rng)
        new = move(cand, p, lb, perturber(rng))
        p.assignment, p.value = new.assignment, new.value
        if compare_values(p.value, p.lb_value) < 0:
            p.lb_assignment, p.lb_value = p.assignment, p.value

    for t in range(2, T + 1):
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as ex:
                list(ex.map(step, range(S)))
        else:
            for j in range(S):
                step(j)
        best = min(particles, key=lambda p: p.lb_value)
        if compare_values(best.lb_value, gb.value) < 0:
            gb = NonregularParticle(best.lb_assignment, best.lb_value)
            co_optimal = {gb.assignment: None}
        for p in particles:
            if p.lb_value == gb.value:
                co_optimal[p.lb_assignment] = None
        trace.append((t, gb.value))

    return SearchResult(
        kind="nonregular",
        best=gb.assignment,
        value=gb.value,
        table=problem.table(gb.assignment),
        report_subsets=[tuple(g) for g in sequence],
        co_optimal=list(co_optimal),
        trace=trace,
        metadata={
            "seed": seed,
            "S": S,
            "T": T,
            "q": q.totals(),
            "wall_time": time.monotonic() - start,
        },
    )


# ---------------------------------------------------------------------
# Reference continuous PSO update (tests only)
# ---------------------------------------------------------------------


def continuous_pso_reference(
    position: np.ndarray,
    velocity: np.ndarray,
    gb: np.ndarray,
    lb: np.ndarray,
    new: np.ndarray,
    c1: float,
    c2: float,
    c3: float,
    dt: float = 1.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Continuous analogue of the three-source update.

    v' = v + c1 (gb - x) + c2 (lb - x) + c3 (new - x);  x' = x + v' dt.
    """
    x = np.asarray(position, dtype=float)
    v = np.asarray(velocity, dtype=float)
    v2 = (
        v
        + c1 * (np.asarray(gb, dtype=float) - x)
        + c2 * (np.asarray(lb, dtype=float) - x)
        + c3 * (np.asarray(new, dtype=float) - x)
    )
    return x + v2 * dt, v2


@dataclass(frozen=True)
class SwarmState:
    """Snapshot of a swarm mid-run, for audits and debugging."""

    iteration: int
    particle_values: tuple[tuple, ...]
    local_best_values: tuple[tuple, ...]
    global_best_value: tuple

    def consistent(self) -> bool:
        return self.global_best_value == min(self.local_best_values)


FISH_MIXTURE_ROWS: tuple[int, ...] = tuple(
    m for m in range(8) if m != 0b111
)  # all blends except (-1, -1, -1); bit=1 encodes level -1


def fish_patty_problem(
    n_process_runs: int = 4, distinct: bool = True
) -> tuple[NonregularProblem, BlockStructure]:
    """28-run strip-plot: 7 fixed mixture blends crossed with a searched
    sub-design of processing runs.

    Factors are (x1, x2, x3, z1, z2, z3); rows carry the fixed mixture
    part and the search chooses the z sub-design columns.
    """
    from .blocks import cross, BlockStructure as BS

    rows = len(FISH_MIXTURE_ROWS)
    structure = cross(
        BS.unstructured(rows), BS.unstructured(n_process_runs)
    )
    slot_units = [
        [i * n_process_runs + j for i in range(rows)]
        for j in range(n_process_runs)
    ]

    def slot_run(u: int, v: int) -> int:
        blend = FISH_MIXTURE_ROWS[u // n_process_runs]
        return blend | (v << 3)

    problem = NonregularProblem(
        structure,
        6,
        pool=list(range(8)),  # all z combinations
        slot_units=slot_units,
        slot_run=slot_run,
        distinct=distinct,
        fraction_size=2 ** 5,  # benchmark fraction: half of the 2^6 runs
    )
    return problem, structure
