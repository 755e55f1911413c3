"""Core data types shared across the package.

Everything downstream speaks in terms of a small set of immutable records:
observations (optionally instrumented), preference-trial records that carry a
stated intent next to the treatment actually taken, datasets with an explicit
schema, decision regimes, and closed intervals for partially identified
quantities.
"""

from __future__ import annotations

import csv
import enum
import hashlib
import io
import logging
import math
from dataclasses import dataclass

logger = logging.getLogger(__name__)

# Column names with fixed meaning in CSV files; everything else is a covariate.
RESERVED_COLUMNS = ("z", "a", "a_star", "arm", "y")

ARMS = ("assigned_0", "assigned_1", "preference")

REGIME_KINDS = (
    "observed",
    "optimal_L",
    "superoptimal_LA",
    "superoptimal_LAZ",
    "explicit_table",
)


class ValidationError(ValueError):
    """Malformed input data or schema. CLI maps this to exit code 1."""


class NumericalError(ArithmeticError):
    """A numerical precondition failed (zero instrument strength, empty stratum,
    positivity violation, infeasible bounds). CLI maps this to exit code 2."""


def _check_binary(name: str, value: int) -> None:
    if value not in (0, 1):
        raise ValidationError(f"{name} must be 0 or 1, got {value!r}")


@dataclass(frozen=True)
class Observation:
    """A single observed unit: covariates, treatment taken, outcome, and
    optionally an instrument value."""

    l: tuple  # covariate values, in schema order; () when there are none
    a: int  # treatment actually taken
    y: float
    z: int | None = None  # instrument, if the design has one

    def __post_init__(self) -> None:
        if not isinstance(self.l, tuple):
            object.__setattr__(self, "l", tuple(self.l))
        _check_binary("a", self.a)
        if self.z is not None:
            _check_binary("z", self.z)
        if not isinstance(self.y, (int, float)) or not math.isfinite(self.y):
            raise ValidationError(f"y must be a finite number, got {self.y!r}")


@dataclass(frozen=True)
class PreferenceTrialRecord:
    """A unit from a randomized design that tracks stated intent.

    `a_star` is the treatment actually administered, `arm` says how it was
    chosen, and `a` is the participant's own choice (their natural treatment
    value) when it was elicited.  In the `preference` arm the participant
    received their choice, so `a_star == a` there.
    """

    l: tuple
    a_star: int  # treatment administered
    arm: str  # one of ARMS
    y: float
    a: int | None = None  # stated choice; None when the design never asked
    z: int | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.l, tuple):
            object.__setattr__(self, "l", tuple(self.l))
        _check_binary("a_star", self.a_star)
        if self.arm not in ARMS:
            raise ValidationError(f"arm must be one of {ARMS}, got {self.arm!r}")
        if self.a is not None:
            _check_binary("a", self.a)
        if self.arm == "preference":
            if self.a is None:
                raise ValidationError("preference-arm record must carry the stated choice a")
            if self.a != self.a_star:
                raise ValidationError(
                    f"preference-arm record must have a_star == a, got a_star={self.a_star}, a={self.a}"
                )
        if self.z is not None:
            _check_binary("z", self.z)
        if not isinstance(self.y, (int, float)) or not math.isfinite(self.y):
            raise ValidationError(f"y must be a finite number, got {self.y!r}")


@dataclass(frozen=True)
class Schema:
    """Names and admissible levels of the covariate columns, plus design flags."""

    covariates: tuple[str, ...]
    levels: dict[str, tuple]  # per-covariate admissible values
    has_instrument: bool = False
    row_kind: str = "observation"  # "observation" | "preference_trial"

    def __post_init__(self) -> None:
        if self.row_kind not in ("observation", "preference_trial"):
            raise ValidationError(f"unknown row_kind {self.row_kind!r}")
        for name in self.covariates:
            if name in RESERVED_COLUMNS:
                raise ValidationError(f"covariate name {name!r} collides with a reserved column")
            if name not in self.levels or len(self.levels[name]) == 0:
                raise ValidationError(f"no admissible levels declared for covariate {name!r}")

    def check_context(self, l: tuple) -> None:
        if len(l) != len(self.covariates):
            raise ValidationError(
                f"context {l!r} has {len(l)} values but schema declares {len(self.covariates)} covariates"
            )
        for name, value in zip(self.covariates, l):
            if value not in self.levels[name]:
                raise ValidationError(f"unknown level {value!r} for covariate {name!r}")

    def contexts(self) -> list[tuple]:
        """Full cartesian product of declared levels, in deterministic order."""
        out: list[tuple] = [()]
        for name in self.covariates:
            out = [ctx + (lev,) for ctx in out for lev in self.levels[name]]
        return out


@dataclass(frozen=True)
class Dataset:
    """A nonempty homogeneous collection of rows plus the schema they follow."""

    rows: tuple
    schema: Schema

    def __post_init__(self) -> None:
        if not isinstance(self.rows, tuple):
            object.__setattr__(self, "rows", tuple(self.rows))
        if len(self.rows) == 0:
            raise ValidationError("dataset must contain at least one row")
        want = Observation if self.schema.row_kind == "observation" else PreferenceTrialRecord
        for i, row in enumerate(self.rows):
            if type(row) is not want:
                raise ValidationError(
                    f"row {i}: expected {want.__name__} (schema row_kind={self.schema.row_kind!r})"
                )
            if (row.z is not None) != self.schema.has_instrument:
                raise ValidationError(
                    f"row {i}: instrument value {'present' if row.z is not None else 'missing'} "
                    f"but schema has_instrument={self.schema.has_instrument}"
                )
            self.schema.check_context(row.l)

    def __len__(self) -> int:
        return len(self.rows)

    def contexts(self) -> list[tuple]:
        """Distinct covariate contexts actually present, in sorted order."""
        return sorted({row.l for row in self.rows}, key=repr)

    def describe(self) -> dict[str, dict]:
        """Per-column summaries: counts per level for discrete columns, moments for y."""
        out: dict[str, dict] = {}
        for j, name in enumerate(self.schema.covariates):
            counts: dict = {}
            for row in self.rows:
                counts[row.l[j]] = counts.get(row.l[j], 0) + 1
            out[name] = {"kind": "covariate", "counts": counts}
        for name in ("z", "a", "a_star"):
            values = [getattr(row, name, None) for row in self.rows]
            if any(v is not None for v in values):
                counts = {}
                for v in values:
                    counts[v] = counts.get(v, 0) + 1
                out[name] = {"kind": "binary", "counts": counts}
        if self.schema.row_kind == "preference_trial":
            counts = {}
            for row in self.rows:
                counts[row.arm] = counts.get(row.arm, 0) + 1
            out["arm"] = {"kind": "categorical", "counts": counts}
        ys = [row.y for row in self.rows]
        n = len(ys)
        mean = sum(ys) / n
        var = sum((v - mean) ** 2 for v in ys) / n
        out["y"] = {"kind": "numeric", "n": n, "mean": mean, "sd": math.sqrt(var),
                    "min": min(ys), "max": max(ys)}
        return out


@dataclass(frozen=True)
class IntervalBound:
    """A closed interval [lo, hi] for a partially identified quantity."""

    lo: float
    hi: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise NumericalError(f"interval endpoints must be finite, got [{self.lo}, {self.hi}]")
        if self.lo > self.hi:
            raise NumericalError(f"interval lower end {self.lo} exceeds upper end {self.hi}")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def contains(self, x: float, tol: float = 0.0) -> bool:
        return self.lo - tol <= x <= self.hi + tol

    def is_point(self, tol: float = 1e-12) -> bool:
        return self.width <= tol

    def widened(self, lo_by: float, hi_by: float) -> "IntervalBound":
        return IntervalBound(self.lo - lo_by, self.hi + hi_by)


class Instruction(enum.IntEnum):
    """How the best intent-aware rule relates to intent-free play in a context.

    FOLLOW: the intent-aware rule coincides with the best intent-free rule.
    KEEP_INTENT: let everyone do what they intended to do.
    FLIP_INTENT: assign everyone the opposite of what they intended.
    """

    FOLLOW = 0
    KEEP_INTENT = 1
    FLIP_INTENT = 2

    @property
    def label(self) -> str:
        return {0: "follow", 1: "keep_intent", 2: "flip_intent"}[int(self)]


def classify_instruction(effect_if_intent_1: float, effect_if_intent_0: float) -> Instruction:
    """Classify a context by the sign pattern of the treatment effect within
    each intent stratum.

    `effect_if_intent_a` is the mean effect of treatment (a=1 vs a=0) among
    units whose own choice would be `a`.  Same sign in both strata means intent
    carries no decision-relevant information (FOLLOW); a positive effect only
    among the willing means intent is self-favoring (KEEP_INTENT); a positive
    effect only among the decliners means intent is self-defeating
    (FLIP_INTENT).
    """
    pos1 = effect_if_intent_1 >= 0.0
    pos0 = effect_if_intent_0 >= 0.0
    if pos1 == pos0:
        return Instruction.FOLLOW
    return Instruction.KEEP_INTENT if pos1 else Instruction.FLIP_INTENT


# Context forms a regime table can be keyed by:
#   "l"   -> key l                      (intent-free rule)
#   "al"  -> key (a_intent, l)          (rule that reads the intended treatment)
#   "alz" -> key (a_intent, l, z)       (rule that also reads the instrument)
_CONTEXT_FORMS = {"optimal_L": "l", "superoptimal_LA": "al", "superoptimal_LAZ": "alz"}


@dataclass(frozen=True)
class Regime:
    """A deterministic treatment rule.

    `observed` assigns everyone the treatment they would have taken anyway and
    needs no table.  The other kinds carry an explicit decision table keyed by
    covariate context, optionally together with the intended treatment and the
    instrument value.
    """

    kind: str
    table: dict | None = None
    context_form: str | None = None  # required for explicit_table, derived otherwise

    def __post_init__(self) -> None:
        if self.kind not in REGIME_KINDS:
            raise ValidationError(f"unknown regime kind {self.kind!r}")
        if self.kind == "observed":
            if self.table is not None:
                raise ValidationError("observed regime carries no table")
            return
        if self.kind == "explicit_table":
            if self.context_form not in ("l", "al", "alz"):
                raise ValidationError("explicit_table regime needs context_form in {'l','al','alz'}")
        else:
            object.__setattr__(self, "context_form", _CONTEXT_FORMS[self.kind])
        if not self.table:
            raise ValidationError(f"regime kind {self.kind!r} requires a nonempty table")
        for key, action in self.table.items():
            if action not in (0, 1):
                raise ValidationError(f"regime action for key {key!r} must be 0 or 1, got {action!r}")

    def decide(self, a_intent: int | None = None, l: tuple = (), z: int | None = None) -> int:
        """Treatment assigned to a unit with intended treatment `a_intent`,
        covariates `l`, and (if relevant) instrument value `z`."""
        if self.kind == "observed":
            if a_intent is None:
                raise ValidationError("observed regime needs the intended treatment")
            return a_intent
        if self.context_form == "l":
            key = l
        elif self.context_form == "al":
            if a_intent is None:
                raise ValidationError(f"regime kind {self.kind!r} needs the intended treatment")
            key = (a_intent, l)
        else:
            if a_intent is None or z is None:
                raise ValidationError(f"regime kind {self.kind!r} needs intended treatment and instrument")
            key = (a_intent, l, z)
        try:
            return self.table[key]  # type: ignore[index]
        except KeyError:
            raise ValidationError(f"regime table has no entry for key {key!r}") from None

    def missing_keys(self, contexts: list[tuple], z_levels: tuple = (0, 1)) -> list:
        """Keys a total table over `contexts` would need but this table lacks."""
        if self.kind == "observed":
            return []
        if self.context_form == "l":
            wanted = list(contexts)
        elif self.context_form == "al":
            wanted = [(a, l) for a in (0, 1) for l in contexts]
        else:
            wanted = [(a, l, z) for a in (0, 1) for l in contexts for z in z_levels]
        return [k for k in wanted if k not in self.table]  # type: ignore[operator]


#======================================================================
# CSV interchange
#======================================================================

def _parse_cell(row_idx: int, name: str, text: str, *, required: bool, kind: str):
    """Parse one CSV cell; kind in {'binary','numeric','arm'}."""
    text = text.strip() if text is not None else ""
    if text == "":
        if required:
            raise ValidationError(f"row {row_idx}: column {name!r}: value required but empty")
        return None
    if kind == "binary":
        if text not in ("0", "1"):
            raise ValidationError(f"row {row_idx}: column {name!r}: expected 0 or 1, got {text!r}")
        return int(text)
    if kind == "arm":
        if text not in ARMS:
            raise ValidationError(f"row {row_idx}: column {name!r}: expected one of {ARMS}, got {text!r}")
        return text
    try:
        value = float(text)
    except ValueError:
        raise ValidationError(f"row {row_idx}: column {name!r}: not a number: {text!r}") from None
    if not math.isfinite(value):
        raise ValidationError(f"row {row_idx}: column {name!r}: value must be finite, got {text!r}")
    return value


def validate_dataset(raw_rows: list[dict], schema: Schema | None = None) -> Dataset:
    """Turn raw string-valued rows (e.g. from csv.DictReader) into a Dataset.

    When `schema` is None it is inferred: reserved columns keep their fixed
    meaning, every other column is a covariate whose admissible levels are the
    distinct values observed.  Errors name the offending row and column.
    """
    if not raw_rows:
        raise ValidationError("no rows supplied")
    columns = list(raw_rows[0].keys())
    for i, raw in enumerate(raw_rows):
        if list(raw.keys()) != columns:
            raise ValidationError(f"row {i}: ragged row (columns differ from header)")
    if "y" not in columns:
        raise ValidationError("column 'y' is required")
    if "a" not in columns and "a_star" not in columns:
        raise ValidationError("a treatment column ('a' or 'a_star') is required")

    covariate_names = tuple(c for c in columns if c not in RESERVED_COLUMNS)
    has_instrument = "z" in columns and any((raw.get("z") or "").strip() != "" for raw in raw_rows)
    is_trial = "arm" in columns or "a_star" in columns

    problems: list[str] = []
    rows: list = []
    for i, raw in enumerate(raw_rows):
        try:
            l = tuple((raw[name] or "").strip() for name in covariate_names)
            for name, value in zip(covariate_names, l):
                if value == "":
                    raise ValidationError(f"row {i}: column {name!r}: value required but empty")
            y = _parse_cell(i, "y", raw["y"], required=True, kind="numeric")
            z = _parse_cell(i, "z", raw.get("z", ""), required=False, kind="binary") if has_instrument else None
            if is_trial:
                arm = _parse_cell(i, "arm", raw.get("arm", ""), required=True, kind="arm")
                a_star = _parse_cell(i, "a_star", raw.get("a_star", ""), required=True, kind="binary")
                a = _parse_cell(i, "a", raw.get("a", ""), required=False, kind="binary")
                rows.append(PreferenceTrialRecord(l=l, a_star=a_star, arm=arm, y=y, a=a, z=z))
            else:
                a = _parse_cell(i, "a", raw.get("a", ""), required=True, kind="binary")
                rows.append(Observation(l=l, a=a, y=y, z=z))
        except ValidationError as exc:
            problems.append(str(exc))
            if len(problems) >= 20:
                problems.append("... further problems suppressed")
                break
    if problems:
        raise ValidationError("; ".join(problems))

    if schema is None:
        levels = {
            name: tuple(sorted({row.l[j] for row in rows}))
            for j, name in enumerate(covariate_names)
        }
        schema = Schema(
            covariates=covariate_names,
            levels=levels,
            has_instrument=has_instrument,
            row_kind="preference_trial" if is_trial else "observation",
        )
    dataset = Dataset(rows=tuple(rows), schema=schema)
    logger.debug("validated dataset: %d rows, %d covariates", len(dataset), len(covariate_names))
    return dataset


def parse_dataset(text: str, schema: Schema | None = None) -> Dataset:
    """Parse CSV text (UTF-8, header row) into a Dataset."""
    reader = csv.DictReader(io.StringIO(text))
    raw_rows = [dict(r) for r in reader]
    return validate_dataset(raw_rows, schema=schema)


def _format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def serialize_dataset(dataset: Dataset) -> str:
    """Render a Dataset as CSV text; parse(serialize(ds)) reproduces ds exactly
    when levels are strings (as they are for any dataset that came from CSV)."""
    schema = dataset.schema
    columns: list[str] = list(schema.covariates)
    if schema.has_instrument:
        columns.append("z")
    columns.append("a")
    if schema.row_kind == "preference_trial":
        columns += ["a_star", "arm"]
    columns.append("y")

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in dataset.rows:
        record = {name: value for name, value in zip(schema.covariates, row.l)}
        record["a"] = row.a
        record["y"] = row.y
        if schema.has_instrument:
            record["z"] = row.z
        if schema.row_kind == "preference_trial":
            record["a_star"] = row.a_star
            record["arm"] = row.arm
        writer.writerow([_format_value(record.get(name)) for name in columns])
    return buf.getvalue()


def load_dataset(path: str, schema: Schema | None = None) -> Dataset:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return parse_dataset(fh.read(), schema=schema)


def save_dataset(dataset: Dataset, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(serialize_dataset(dataset))


def dataset_fingerprint(dataset: Dataset) -> str:
    """Stable content hash used to tie fitted artifacts back to their data."""
    return hashlib.sha256(serialize_dataset(dataset).encode("utf-8")).hexdigest()[:16]
