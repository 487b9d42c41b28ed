"""Dempster-Shafer mass-function algebra over small finite frames.

A frame of discernment is an ordered tuple of class labels.  Subsets of the
frame are encoded as integer bitmasks over the label order (bit k set means
label k is in the subset), so the empty set is ``0`` and the full frame is
``2**K - 1``.  The frame order is part of the data contract: serialized mass
functions are unambiguous only together with their label order.

Three belief representations live here:

* :class:`MassFunction` -- a general basic belief assignment stored as a
  sparse map from focal-set bitmask to mass.  Exact powerset algebra
  (combination, conditioning, discounting) is supported for frames of up to
  16 labels.
* :class:`SimpleMassFunction` -- the restricted family whose focal sets are
  the K singletons and the full frame.  This family is closed under
  Dempster's rule and is what the evidence-mapping layer produces.
* :class:`ContourFunction` -- the singleton plausibilities of a mass
  function.  Contours support linear-time combination and contextual
  discounting, which is all decision-making needs.

All values are immutable after construction and every operation is a pure
function of its inputs, so concurrent evaluation needs no synchronization.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping

import numpy as np

#: Largest frame for which general (powerset-indexed) operations are allowed.
MAX_GENERAL_K = 16

#: Invariant tolerance: masses must sum to one within this bound.
SUM_TOL = 1e-12

#: Construction repairs normalization drift up to this bound by rescaling;
#: anything larger is treated as a bug in the caller and raises.
RENORM_TOL = 1e-9

#: Two mass functions are non-combinable when their conflict reaches this.
TOTAL_CONFLICT_TOL = 1e-12


class FrameMismatchError(ValueError):
    """Raised when two belief objects over different frames are mixed."""


class TotalConflictError(ValueError):
    """Raised when Dempster combination meets (near-)total conflict."""


class InvalidMassError(ValueError):
    """Raised when a mass assignment violates the basic-belief invariants."""


@dataclass(frozen=True)
class Frame:
    """An ordered frame of discernment.

    ``labels`` must be distinct, whitespace-free strings; their order fixes
    the bitmask encoding of subsets.
    """

    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.labels) < 2:
            raise ValueError("a frame needs at least two labels")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("frame labels must be distinct")
        for lab in self.labels:
            if not lab or any(c.isspace() for c in lab):
                raise ValueError(f"label {lab!r} is empty or contains whitespace")

    @classmethod
    def indexed(cls, k: int) -> "Frame":
        """Frame with generic labels ``class1 .. classK``."""
        return cls(tuple(f"class{i + 1}" for i in range(k)))

    @property
    def k(self) -> int:
        return len(self.labels)

    @property
    def full(self) -> int:
        """Bitmask of the whole frame."""
        return (1 << self.k) - 1

    def singleton(self, index: int) -> int:
        """Bitmask of the singleton containing label ``index``."""
        if not 0 <= index < self.k:
            raise IndexError(f"label index {index} out of range for K={self.k}")
        return 1 << index

    def subset(self, labels: Iterable[str]) -> int:
        """Bitmask of the subset holding the given labels."""
        bits = 0
        for lab in labels:
            bits |= 1 << self.labels.index(lab)
        return bits

    def members(self, bits: int) -> tuple[str, ...]:
        """Labels contained in the subset ``bits``."""
        return tuple(lab for i, lab in enumerate(self.labels) if bits >> i & 1)

    def subsets(self) -> Iterator[int]:
        """All ``2**K`` subset bitmasks in ascending order."""
        return iter(range(1 << self.k))


def iter_submasks(bits: int) -> Iterator[int]:
    """All submasks of ``bits``, including 0 and ``bits`` itself."""
    sub = bits
    while True:
        yield sub
        if sub == 0:
            return
        sub = (sub - 1) & bits


def mass_violations(frame: Frame, masses: Mapping[int, float]) -> list[str]:
    """Diagnostic check of the basic-belief invariants.

    Returns a list of human-readable violation descriptions; an empty list
    means the assignment is a valid mass function over ``frame``.
    """
    problems = []
    if frame.k > MAX_GENERAL_K:
        problems.append(f"frame has K={frame.k} > {MAX_GENERAL_K} labels")
    for bits, value in masses.items():
        if not 0 <= bits <= frame.full:
            problems.append(f"subset bitmask {bits} outside 0..{frame.full}")
        if value < -SUM_TOL or value > 1.0 + SUM_TOL:
            problems.append(f"mass {value!r} on subset {bits} outside [0, 1]")
    if masses.get(0, 0.0) != 0.0:
        problems.append("m(empty set) != 0")
    total = float(sum(masses.values()))
    if abs(total - 1.0) > SUM_TOL:
        problems.append(f"masses sum to {total!r}, not 1")
    return problems


class MassFunction:
    """A general basic belief assignment over subsets of a frame.

    Masses are stored sparsely: only focal sets (subsets with positive mass)
    are kept.  Construction validates the invariants, repairing normalization
    drift of at most ``RENORM_TOL`` by rescaling and raising
    :class:`InvalidMassError` for anything worse.
    """

    __slots__ = ("frame", "_masses")

    def __init__(self, frame: Frame, masses: Mapping[int, float]):
        total = float(sum(masses.values()))
        drift_only = abs(total - 1.0) <= RENORM_TOL
        problems = [
            p
            for p in mass_violations(frame, masses)
            if not (drift_only and p.startswith("masses sum to"))
        ]
        if problems:
            raise InvalidMassError("; ".join(problems))
        scale = 1.0 / total
        cleaned = {
            bits: value * scale
            for bits, value in sorted(masses.items())
            if value != 0.0
        }
        object.__setattr__(self, "frame", frame)
        object.__setattr__(self, "_masses", cleaned)

    def __setattr__(self, name, value):
        raise AttributeError("MassFunction is immutable")

    # -- constructors ----------------------------------------------------

    @classmethod
    def vacuous(cls, frame: Frame) -> "MassFunction":
        """Total ignorance: all mass on the full frame."""
        return cls(frame, {frame.full: 1.0})

    @classmethod
    def categorical(cls, frame: Frame, bits: int) -> "MassFunction":
        """All mass on a single nonempty subset."""
        if bits == 0:
            raise InvalidMassError("categorical mass on the empty set")
        return cls(frame, {bits: 1.0})

    # -- basic accessors --------------------------------------------------

    @property
    def masses(self) -> dict[int, float]:
        """Focal sets and their masses, keyed by bitmask, ascending."""
        return dict(self._masses)

    def mass(self, bits: int) -> float:
        return self._masses.get(bits, 0.0)

    def focal_sets(self) -> tuple[int, ...]:
        return tuple(self._masses)

    def validate(self) -> list[str]:
        """Re-run the invariant diagnostics on the stored masses."""
        return mass_violations(self.frame, self._masses)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, MassFunction)
            and self.frame == other.frame
            and self._masses == other._masses
        )

    def __repr__(self) -> str:
        parts = ", ".join(
            f"{{{','.join(self.frame.members(b)) or ''}}}: {v:.6g}"
            for b, v in self._masses.items()
        )
        return f"MassFunction({parts})"

    def _check_frame(self, other_frame: Frame) -> None:
        if other_frame != self.frame:
            raise FrameMismatchError(
                f"frames differ: {self.frame.labels} vs {other_frame.labels}"
            )

    # -- belief measures --------------------------------------------------

    def belief(self, bits: int) -> float:
        """Degree of support for the subset: total mass of its subsets."""
        if not 0 <= bits <= self.frame.full:
            raise FrameMismatchError(f"subset bitmask {bits} not over this frame")
        return float(sum(v for b, v in self._masses.items() if b & ~bits == 0))

    def plausibility(self, bits: int) -> float:
        """Lack of support against the subset: mass of everything meeting it."""
        if not 0 <= bits <= self.frame.full:
            raise FrameMismatchError(f"subset bitmask {bits} not over this frame")
        return float(sum(v for b, v in self._masses.items() if b & bits))

    def contour(self) -> "ContourFunction":
        """Plausibilities of the singletons."""
        pl = np.array(
            [self.plausibility(self.frame.singleton(i)) for i in range(self.frame.k)]
        )
        return ContourFunction(self.frame, pl)

    # -- combination and conditioning --------------------------------------

    def combine(self, other: "MassFunction") -> tuple["MassFunction", float]:
        """Dempster's rule: the orthogonal sum and the degree of conflict.

        The conflict is the total product mass falling on the empty set;
        the returned mass function is normalized by one minus it.  Raises
        :class:`TotalConflictError` when the conflict reaches 1, i.e. the
        two items of evidence are non-combinable.
        """
        self._check_frame(other.frame)
        combined: dict[int, float] = {}
        conflict = 0.0
        for b, mb in self._masses.items():
            for c, mc in other._masses.items():
                inter = b & c
                if inter:
                    combined[inter] = combined.get(inter, 0.0) + mb * mc
                else:
                    conflict += mb * mc
        if conflict >= 1.0 - TOTAL_CONFLICT_TOL:
            raise TotalConflictError(f"total conflict (kappa={conflict!r})")
        norm = 1.0 - conflict
        return (
            MassFunction(self.frame, {b: v / norm for b, v in combined.items()}),
            float(conflict),
        )

    def condition(self, bits: int) -> "MassFunction":
        """Condition on a subset with positive plausibility.

        Equals the orthogonal sum with the categorical mass on the subset.
        """
        if bits == 0:
            raise ValueError("cannot condition on the empty set")
        if self.plausibility(bits) <= 0.0:
            raise ValueError("conditioning on an event with zero plausibility")
        conditioned, _ = self.combine(MassFunction.categorical(self.frame, bits))
        return conditioned

    def conditional_embedding(self, bits: int) -> "MassFunction":
        """Decondition a mass function carried by ``bits`` back to the frame.

        Each focal mass on C is transferred to C united with the complement
        of ``bits``, yielding the least precise mass function whose
        conditioning on ``bits`` recovers this one.
        """
        comp = self.frame.full & ~bits
        embedded: dict[int, float] = {}
        for b, v in self._masses.items():
            if b & ~bits:
                raise ValueError(
                    f"focal set {b} is not contained in the conditioning subset"
                )
            target = b | comp
            embedded[target] = embedded.get(target, 0.0) + v
        return MassFunction(self.frame, embedded)

    # -- reliability corrections -------------------------------------------

    def discount(self, beta: float) -> "MassFunction":
        """Classical discounting: keep the mass with weight ``beta`` and move
        the rest to total ignorance.

        ``beta`` is the degree of belief that the source is reliable; 1
        accepts the mass function unchanged, 0 rejects it entirely.
        """
        if not 0.0 <= beta <= 1.0:
            raise ValueError(f"reliability coefficient {beta!r} outside [0, 1]")
        out: dict[int, float] = {b: beta * v for b, v in self._masses.items()}
        out[self.frame.full] = out.get(self.frame.full, 0.0) + (1.0 - beta)
        return MassFunction(self.frame, out)

    def contextual_discount(self, beta: "ReliabilityVector") -> "MassFunction":
        """Contextual discounting with one reliability coefficient per class.

        Each focal mass m(B) is distributed over the supersets A of B: the
        share reaching A is the product of (1 - beta_k) over the classes k
        added to B and of beta_l over the classes l outside A (empty
        products count as 1).  The per-focal shares sum to the original
        mass, so the result is again a valid mass function.
        """
        self._check_frame(beta.frame)
        bvals = beta.beta
        out: dict[int, float] = {}
        for b, v in self._masses.items():
            comp = self.frame.full & ~b
            for added in iter_submasks(comp):
                weight = 1.0
                rest = comp & ~added
                for k in range(self.frame.k):
                    if added >> k & 1:
                        weight *= 1.0 - bvals[k]
                    elif rest >> k & 1:
                        weight *= bvals[k]
                if weight:
                    target = b | added
                    out[target] = out.get(target, 0.0) + v * weight
        return MassFunction(self.frame, out)

    # -- serialization ------------------------------------------------------

    def to_text(self) -> str:
        """Text record: frame labels, then ``bitmask mass`` lines ascending.

        Masses are printed with 17 significant digits, enough for an exact
        float64 round trip.
        """
        lines = [" ".join(self.frame.labels)]
        lines.extend(f"{bits} {value:.17g}" for bits, value in self._masses.items())
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MassFunction":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise InvalidMassError("empty mass-function record")
        frame = Frame(tuple(lines[0].split()))
        masses: dict[int, float] = {}
        for ln in lines[1:]:
            bits_str, value_str = ln.split()
            masses[int(bits_str)] = float(value_str)
        return cls(frame, masses)


@dataclass(frozen=True)
class SimpleMassFunction:
    """Mass function whose focal sets are the K singletons and the frame.

    This is the family the evidence-mapping layer emits; it is closed under
    Dempster's rule, since intersections of singletons and the frame are
    again singletons, the frame, or empty.
    """

    frame: Frame
    singleton_masses: np.ndarray
    theta_mass: float

    def __post_init__(self) -> None:
        sm = np.array(self.singleton_masses, dtype=float)
        sm.flags.writeable = False
        object.__setattr__(self, "singleton_masses", sm)
        object.__setattr__(self, "theta_mass", float(self.theta_mass))
        if sm.shape != (self.frame.k,):
            raise InvalidMassError(
                f"expected {self.frame.k} singleton masses, got shape {sm.shape}"
            )
        if np.any(sm < 0.0) or self.theta_mass < 0.0:
            raise InvalidMassError("negative mass entry")
        total = float(sm.sum() + self.theta_mass)
        if abs(total - 1.0) > RENORM_TOL:
            raise InvalidMassError(f"masses sum to {total!r}, not 1")
        if total != 1.0:
            rescaled = sm / total
            rescaled.flags.writeable = False
            object.__setattr__(self, "singleton_masses", rescaled)
            object.__setattr__(self, "theta_mass", self.theta_mass / total)

    @classmethod
    def vacuous(cls, frame: Frame) -> "SimpleMassFunction":
        return cls(frame, np.zeros(frame.k), 1.0)

    @classmethod
    def from_mass_function(cls, m: MassFunction) -> "SimpleMassFunction":
        """Convert a general mass function whose focal sets are singletons
        or the frame; raises for anything outside the family."""
        sm = np.zeros(m.frame.k)
        theta = 0.0
        for bits, value in m.masses.items():
            if bits == m.frame.full:
                theta = value
            elif bits.bit_count() == 1:
                sm[bits.bit_length() - 1] = value
            else:
                raise InvalidMassError(
                    f"focal set {bits} is neither a singleton nor the frame"
                )
        return cls(m.frame, sm, theta)

    def to_mass_function(self) -> MassFunction:
        masses = {
            self.frame.singleton(i): float(v)
            for i, v in enumerate(self.singleton_masses)
            if v != 0.0
        }
        if self.theta_mass != 0.0:
            masses[self.frame.full] = masses.get(self.frame.full, 0.0) + self.theta_mass
        return MassFunction(self.frame, masses)

    def contour(self) -> "ContourFunction":
        """Singleton plausibilities: singleton mass plus the frame mass."""
        return ContourFunction(self.frame, self.singleton_masses + self.theta_mass)


@dataclass(frozen=True)
class ContourFunction:
    """Plausibilities of the singletons of a frame.

    Contours are sufficient for decision-making: combination and contextual
    discounting act on them in linear time, and normalizing them yields a
    probability distribution.
    """

    frame: Frame
    pl: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.pl, dtype=float)
        if values.shape != (self.frame.k,):
            raise ValueError(f"expected {self.frame.k} plausibilities, got {values.shape}")
        if np.any(values < -1e-9) or np.any(values > 1.0 + 1e-9):
            raise ValueError("plausibility outside [0, 1]")
        values = np.clip(values, 0.0, 1.0)
        values.flags.writeable = False
        object.__setattr__(self, "pl", values)

    def _check_frame(self, other_frame: Frame) -> None:
        if other_frame != self.frame:
            raise FrameMismatchError(
                f"frames differ: {self.frame.labels} vs {other_frame.labels}"
            )

    def combine(self, other: "ContourFunction", conflict: float) -> "ContourFunction":
        """Contour of the orthogonal sum, given the conflict of the underlying
        masses: the pointwise product renormalized by one minus the conflict.
        """
        self._check_frame(other.frame)
        if conflict >= 1.0 - TOTAL_CONFLICT_TOL:
            raise TotalConflictError(f"total conflict (kappa={conflict!r})")
        return ContourFunction(self.frame, self.pl * other.pl / (1.0 - conflict))

    def contextual_discount(self, beta: "ReliabilityVector") -> "ContourFunction":
        """Linear-time contour form of contextual discounting:
        ``1 - beta_k + beta_k * pl_k`` per class."""
        self._check_frame(beta.frame)
        return ContourFunction(self.frame, 1.0 - beta.beta + beta.beta * self.pl)

    def to_probabilities(self) -> np.ndarray:
        """Probability distribution from normalized singleton plausibilities."""
        total = float(self.pl.sum())
        if total <= 0.0:
            raise ValueError("cannot normalize an all-zero contour")
        return self.pl / total


@dataclass(frozen=True)
class ReliabilityVector:
    """Per-class reliability coefficients of one evidence source.

    ``beta[k]`` is the degree of belief that the source is reliable when the
    true class is k.
    """

    frame: Frame
    beta: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.beta, dtype=float)
        if values.shape != (self.frame.k,):
            raise ValueError(f"expected {self.frame.k} coefficients, got {values.shape}")
        if np.any(values < 0.0) or np.any(values > 1.0):
            raise ValueError("reliability coefficient outside [0, 1]")
        values = values.copy()
        values.flags.writeable = False
        object.__setattr__(self, "beta", values)
