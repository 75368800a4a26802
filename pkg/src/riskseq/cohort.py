"""Cohort loading, validation, and chronological splitting.

A cohort is three CSV files plus a JSON schema:

* ``schema.json``   -- feature/channel/outcome declarations (versioned).
* ``static.csv``    -- one row per encounter: encounter_id, admit_timestamp,
  then one column per static feature (empty cell = missing).
* ``series.csv``    -- long format: encounter_id, minute, channel, value.
* ``outcomes.csv``  -- encounter_id plus one 0/1 column per outcome.

Nominal level lists in ``schema.json`` declare only the real observed levels;
a reserved ``"missing"`` level is appended on load so every nominal can absorb
unobserved values. The one-hot/embedding rule (fewer than 20 declared levels
one-hot, otherwise embedded) is validated against the declared count.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import pandas as pd

from .errors import DataError

logger = logging.getLogger("riskseq")

SCHEMA_VERSION = 1
MISSING_LEVEL = "missing"
ONEHOT_MAX_DECLARED = 20
N_CHANNELS = 14
N_OUTCOMES = 9

# Reserved continuous features derived from admit_timestamp when the static
# file does not carry them. weekday() is 0=Monday; months map to 0..11.
CYCLICAL_FEATURES = {
    "admission_day_sin": ("day", "sin"),
    "admission_day_cos": ("day", "cos"),
    "admission_month_sin": ("month", "sin"),
    "admission_month_cos": ("month", "cos"),
}


def cyclical_value(ts: datetime, name: str) -> float:
    source, fn = CYCLICAL_FEATURES[name]
    if source == "day":
        index, period = ts.weekday(), 7
    else:
        index, period = ts.month - 1, 12
    angle = 2.0 * math.pi * index / period
    return math.sin(angle) if fn == "sin" else math.cos(angle)


@dataclass(frozen=True)
class Feature:
    name: str
    kind: str                      # continuous | binary | nominal
    levels: tuple = ()             # nominal only; includes the missing level
    encoding: str = ""             # nominal only; onehot | embedded

    @property
    def declared_levels(self) -> int:
        return sum(1 for lv in self.levels if lv != MISSING_LEVEL)


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple
    channels: tuple
    valid_range: dict              # channel -> (lo, hi)
    outcomes: tuple
    zero_fill_channels: tuple = ()

    def by_kind(self, *kinds):
        return [f for f in self.features if f.kind in kinds]

    @property
    def numeric_features(self):
        """Continuous and binary features in declared order."""
        return self.by_kind("continuous", "binary")

    @property
    def onehot_nominals(self):
        return [f for f in self.features if f.kind == "nominal" and f.encoding == "onehot"]

    @property
    def embedded_nominals(self):
        return [f for f in self.features if f.kind == "nominal" and f.encoding == "embedded"]

    @property
    def numeric_width(self) -> int:
        """Width of the encoded numeric static vector: values + masks + one-hots."""
        n = len(self.numeric_features)
        onehot = sum(len(f.levels) for f in self.onehot_nominals)
        return 2 * n + onehot


@dataclass
class RawEncounter:
    encounter_id: str
    admit_timestamp: datetime
    static_values: dict            # feature name -> observed value
    series: list                   # [(minute, channel, value)] in file order
    outcomes: dict                 # outcome name -> 0/1


@dataclass
class Cohort:
    schema: FeatureSchema
    encounters: list = field(default_factory=list)

    def __post_init__(self):
        ids = [e.encounter_id for e in self.encounters]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate encounter_id in cohort")

    def __len__(self):
        return len(self.encounters)


def schema_to_dict(schema: FeatureSchema) -> dict:
    feats = []
    for f in schema.features:
        d = {"name": f.name, "kind": f.kind}
        if f.kind == "nominal":
            d["levels"] = [lv for lv in f.levels if lv != MISSING_LEVEL]
            d["encoding"] = f.encoding
        feats.append(d)
    return {
        "schema_version": SCHEMA_VERSION,
        "features": feats,
        "channels": list(schema.channels),
        "valid_range": {c: list(schema.valid_range[c]) for c in schema.channels},
        "zero_fill_channels": list(schema.zero_fill_channels),
        "outcomes": list(schema.outcomes),
    }


def schema_from_dict(d: dict) -> FeatureSchema:
    if d.get("schema_version") != SCHEMA_VERSION:
        raise DataError(f"unsupported schema_version {d.get('schema_version')!r}")
    features = []
    seen = set()
    for fd in d["features"]:
        name, kind = fd["name"], fd["kind"]
        if name in seen:
            raise DataError(f"duplicate feature name {name!r}")
        seen.add(name)
        if kind not in ("continuous", "binary", "nominal"):
            raise DataError(f"feature {name!r}: unknown kind {kind!r}")
        if kind == "nominal":
            levels = list(fd.get("levels", []))
            if len(set(levels)) != len(levels):
                raise DataError(f"feature {name!r}: duplicate levels")
            if MISSING_LEVEL not in levels:
                levels.append(MISSING_LEVEL)
            encoding = fd.get("encoding", "")
            declared = sum(1 for lv in levels if lv != MISSING_LEVEL)
            if declared < ONEHOT_MAX_DECLARED and encoding != "onehot":
                raise DataError(
                    f"feature {name!r}: {declared} levels requires encoding=onehot"
                )
            if declared >= ONEHOT_MAX_DECLARED and encoding != "embedded":
                raise DataError(
                    f"feature {name!r}: {declared} levels requires encoding=embedded"
                )
            features.append(Feature(name, kind, tuple(levels), encoding))
        else:
            features.append(Feature(name, kind))
    channels = tuple(d["channels"])
    if len(channels) != N_CHANNELS:
        raise DataError(f"schema must declare exactly {N_CHANNELS} channels, got {len(channels)}")
    if len(set(channels)) != len(channels):
        raise DataError("duplicate channel name")
    valid_range = {}
    for c in channels:
        try:
            lo, hi = d["valid_range"][c]
        except KeyError:
            raise DataError(f"channel {c!r}: missing valid_range") from None
        if not lo < hi:
            raise DataError(f"channel {c!r}: empty valid_range")
        valid_range[c] = (float(lo), float(hi))
    outcomes = tuple(d["outcomes"])
    if len(outcomes) != N_OUTCOMES:
        raise DataError(f"schema must declare exactly {N_OUTCOMES} outcomes, got {len(outcomes)}")
    if len(set(outcomes)) != len(outcomes):
        raise DataError("duplicate outcome name")
    zero_fill = tuple(d.get("zero_fill_channels", []))
    for c in zero_fill:
        if c not in channels:
            raise DataError(f"zero_fill channel {c!r} not a declared channel")
    return FeatureSchema(tuple(features), channels, valid_range, outcomes, zero_fill)


def load_schema(path) -> FeatureSchema:
    """Load and validate schema.json."""
    try:
        with open(path) as fh:
            d = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot parse schema {path}: {exc}") from exc
    return schema_from_dict(d)


def save_schema(schema: FeatureSchema, path) -> None:
    Path(path).write_text(json.dumps(schema_to_dict(schema), indent=1) + "\n")


def schema_hash(schema: FeatureSchema) -> str:
    """SHA-256 of the canonical schema JSON; pins checkpoints to a schema."""
    canon = json.dumps(schema_to_dict(schema), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _read_csv(path) -> pd.DataFrame:
    try:
        return pd.read_csv(path, dtype=str, keep_default_na=False)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataError(f"cannot parse {path}: {exc}") from exc


def load_cohort(schema: FeatureSchema, static_path, series_path, outcomes_path) -> Cohort:
    """Assemble a Cohort from the three CSV files.

    Unknown nominal levels map to the reserved missing level (counted and
    logged); unknown channels, negative minutes, and non-binary outcome
    values are errors. Every encounter needs both a static and an outcomes
    row. Encounter order follows static.csv.
    """
    static = _read_csv(static_path)
    for col in ("encounter_id", "admit_timestamp"):
        if col not in static.columns:
            raise DataError(f"{static_path}: missing column {col!r}")

    outcomes_df = _read_csv(outcomes_path)
    if "encounter_id" not in outcomes_df.columns:
        raise DataError(f"{outcomes_path}: missing column 'encounter_id'")
    for name in schema.outcomes:
        if name not in outcomes_df.columns:
            raise DataError(f"{outcomes_path}: missing outcome column {name!r}")
    outcome_rows = {}
    for row in outcomes_df.itertuples(index=False):
        rec = row._asdict() if hasattr(row, "_asdict") else dict(zip(outcomes_df.columns, row))
        outcome_rows[rec["encounter_id"]] = rec
    static_ids = set(static["encounter_id"])
    for eid in outcome_rows:
        if eid not in static_ids:
            raise DataError(f"outcomes row for unknown encounter {eid!r}")

    series_df = _read_csv(series_path)
    for col in ("encounter_id", "minute", "channel", "value"):
        if col not in series_df.columns:
            raise DataError(f"{series_path}: missing column {col!r}")
    channel_set = set(schema.channels)
    series_by_enc: dict = {}
    for row in series_df.itertuples(index=False):
        eid, minute_s, channel, value_s = row.encounter_id, row.minute, row.channel, row.value
        if channel not in channel_set:
            raise DataError(f"series: unknown channel name {channel!r}")
        try:
            minute = int(minute_s)
            value = float(value_s)
        except ValueError as exc:
            raise DataError(f"series: bad row for {eid!r}: {exc}") from exc
        if minute < 0:
            raise DataError(f"series: negative minute offset for {eid!r}")
        if eid not in static_ids:
            raise DataError(f"series row for unknown encounter {eid!r}")
        series_by_enc.setdefault(eid, []).append((minute, channel, value))

    unknown_level_count = 0
    encounters = []
    for row in static.itertuples(index=False):
        rec = dict(zip(static.columns, row))
        eid = rec["encounter_id"]
        ts_raw = rec["admit_timestamp"]
        if not ts_raw:
            raise DataError(f"encounter {eid!r}: missing admit_timestamp")
        try:
            ts = datetime.fromisoformat(ts_raw)
        except ValueError as exc:
            raise DataError(f"encounter {eid!r}: bad admit_timestamp {ts_raw!r}") from exc

        values = {}
        for f in schema.features:
            raw = rec.get(f.name, "")
            if raw == "":
                if f.name in CYCLICAL_FEATURES:
                    values[f.name] = cyclical_value(ts, f.name)
                continue
            if f.kind == "nominal":
                if raw not in f.levels:
                    unknown_level_count += 1
                    raw = MISSING_LEVEL
                values[f.name] = raw
            else:
                try:
                    values[f.name] = float(raw)
                except ValueError as exc:
                    raise DataError(
                        f"encounter {eid!r}: bad value {raw!r} for feature {f.name!r}"
                    ) from exc
        if eid not in outcome_rows:
            raise DataError(f"encounter {eid!r}: no outcomes row")
        labels = {}
        for name in schema.outcomes:
            raw = outcome_rows[eid][name]
            if raw not in ("0", "1"):
                raise DataError(f"encounter {eid!r}: non-binary outcome value {raw!r} for {name!r}")
            labels[name] = int(raw)

        encounters.append(
            RawEncounter(eid, ts, values, series_by_enc.get(eid, []), labels)
        )

    if unknown_level_count:
        logger.warning("mapped %d unknown nominal level(s) to %r", unknown_level_count, MISSING_LEVEL)
    return Cohort(schema, encounters)


def write_cohort(cohort: Cohort, out_dir) -> dict:
    """Write schema.json plus the three cohort CSVs into out_dir.

    Returns the path map. Round-trips through load_cohort exactly.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    schema = cohort.schema
    save_schema(schema, out / "schema.json")

    static_cols = ["encounter_id", "admit_timestamp"] + [f.name for f in schema.features]
    static_rows = []
    series_rows = []
    outcome_rows = []
    for enc in cohort.encounters:
        row = {"encounter_id": enc.encounter_id, "admit_timestamp": enc.admit_timestamp.isoformat()}
        for f in schema.features:
            if f.name in enc.static_values:
                v = enc.static_values[f.name]
                row[f.name] = v if isinstance(v, str) else repr(float(v))
            else:
                row[f.name] = ""
        static_rows.append(row)
        for minute, channel, value in enc.series:
            series_rows.append(
                {"encounter_id": enc.encounter_id, "minute": minute,
                 "channel": channel, "value": repr(float(value))}
            )
        orow = {"encounter_id": enc.encounter_id}
        orow.update({k: enc.outcomes[k] for k in schema.outcomes})
        outcome_rows.append(orow)

    pd.DataFrame(static_rows, columns=static_cols).to_csv(out / "static.csv", index=False)
    pd.DataFrame(series_rows, columns=["encounter_id", "minute", "channel", "value"]).to_csv(
        out / "series.csv", index=False)
    pd.DataFrame(outcome_rows, columns=["encounter_id", *schema.outcomes]).to_csv(
        out / "outcomes.csv", index=False)
    return {
        "schema": out / "schema.json",
        "static": out / "static.csv",
        "series": out / "series.csv",
        "outcomes": out / "outcomes.csv",
    }


def load_cohort_dir(data_dir) -> Cohort:
    d = Path(data_dir)
    schema = load_schema(d / "schema.json")
    return load_cohort(schema, d / "static.csv", d / "series.csv", d / "outcomes.csv")


def split_chronological(cohort: Cohort, cutoff: datetime):
    """Partition into (development, validation) at the cutoff.

    Encounters admitted strictly before the cutoff go to development;
    everything else (including exact ties) to validation. Order preserved.
    """
    for enc in cohort.encounters:
        if enc.admit_timestamp is None:
            raise DataError(f"encounter {enc.encounter_id!r}: missing admit_timestamp")
    dev = [e for e in cohort.encounters if e.admit_timestamp < cutoff]
    val = [e for e in cohort.encounters if e.admit_timestamp >= cutoff]
    return Cohort(cohort.schema, dev), Cohort(cohort.schema, val)


def _lab_summary_features(prefix, stats=("min", "max", "mean", "variance")):
    return [f"{prefix}_{s}_7d" for s in stats]


def default_schema() -> FeatureSchema:
    """The paper-shaped default: 88 continuous + 32 binary numeric features,
    12 small one-hot nominals (55 columns with missing levels), 4 embedded
    nominals, 14 intraoperative channels, 9 outcomes.
    """
    features = []

    continuous = [
        "age", "body_mass_index", "charlson_comorbidity_index",
        "total_population", "median_income", "proportion_african_american",
        "proportion_hispanic", "proportion_below_poverty", "distance_to_hospital_km",
        "days_from_admission_to_surgery", "egfr", "number_of_diagnoses",
    ]
    labs = [
        "hemoglobin", "glucose", "bun", "creatinine", "calcium", "sodium",
        "potassium", "chloride", "co2", "wbc", "mch", "mchc", "rdw",
        "platelets", "ucr_ratio", "hemoglobin_1y", "glucose_1y", "bun_1y",
    ]
    for lab in labs:
        continuous.extend(_lab_summary_features(lab))
    # 12 + 72 = 84, plus the four cyclical admission features = 88
    continuous.extend(CYCLICAL_FEATURES)
    assert len(continuous) == 88

    binary = [
        "gender_male", "ethnicity_hispanic", "rural_area", "admission_source_transfer",
        "admission_type_emergent", "admitting_service_surgery", "night_admission",
        "scheduled_postop_icu", "scheduled_trauma_room", "myocardial_infarction",
        "congestive_heart_failure", "peripheral_vascular_disease", "cerebrovascular_disease",
        "chronic_pulmonary_disease", "diabetes", "cancer", "liver_disease",
        "valvular_disease", "coagulopathy", "weight_loss", "alcohol_drug_abuse",
        "med_betablockers", "med_diuretics", "med_statin", "med_aspirin",
        "med_ace_inhibitors", "med_pressors", "med_bicarbonate", "med_antiemetic",
        "med_aminoglycosides", "med_vancomycin", "med_nsaid",
    ]
    assert len(binary) == 32

    # declared level counts sum to 43; +1 missing level each gives 55 columns
    onehot = [
        ("race", ["white", "african_american", "other"]),
        ("marital_status", ["married", "single", "other"]),
        ("primary_insurance", ["medicare", "private", "medicaid", "uninsured"]),
        ("smoking_status", ["never", "former", "current"]),
        ("urine_protein", ["negative", "small", "moderate", "large"]),
        ("urine_hemoglobin", ["negative", "small", "large"]),
        ("urine_glucose", ["negative", "moderate", "large"]),
        ("urine_erythrocytes", ["negative", "small", "moderate", "large"]),
        ("surgery_type", ["orthopedic", "neuro", "vascular", "cardiothoracic", "urologic",
                          "trauma", "gastrointestinal", "ent", "gynecologic", "other"]),
        ("admission_source_detail", ["home", "facility"]),
        ("anesthesia_type", ["general", "regional"]),
        ("surgical_service", ["inpatient", "ambulatory"]),
    ]
    assert sum(len(lv) for _, lv in onehot) == 43

    # declared cardinalities follow Table 3; the loader appends one missing level
    embedded = [
        ("zip_code", 1908),
        ("attending_surgeon", 311),
        ("primary_procedure", 2126),
        ("operating_room", 64),
    ]

    for name in continuous:
        features.append(Feature(name, "continuous"))
    for name in binary:
        features.append(Feature(name, "binary"))
    for name, levels in onehot:
        features.append(Feature(name, "nominal", tuple(levels) + (MISSING_LEVEL,), "onehot"))
    for name, count in embedded:
        levels = tuple(f"{name}_{i:04d}" for i in range(count)) + (MISSING_LEVEL,)
        features.append(Feature(name, "nominal", levels, "embedded"))

    channels = (
        "sbp", "dbp", "etco2", "fio2", "heart_rate", "mac", "o2_flow",
        "peep", "pip", "respiratory_rate", "spo2", "temperature",
        "urine_output", "blood_loss",
    )
    valid_range = {
        "sbp": (20.0, 300.0), "dbp": (10.0, 225.0), "etco2": (0.0, 100.0),
        "fio2": (10.0, 100.0), "heart_rate": (20.0, 260.0), "mac": (0.0, 4.0),
        "o2_flow": (0.0, 20.0), "peep": (0.0, 40.0), "pip": (0.0, 80.0),
        "respiratory_rate": (0.0, 60.0), "spo2": (40.0, 100.0),
        "temperature": (30.0, 43.0), "urine_output": (0.0, 4000.0),
        "blood_loss": (0.0, 8000.0),
    }
    outcomes = (
        "prolonged_icu", "prolonged_ventilation", "neurological", "acute_kidney_injury",
        "cardiovascular", "venous_thromboembolism", "wound", "sepsis", "mortality",
    )
    return FeatureSchema(
        tuple(features), channels, valid_range, outcomes,
        zero_fill_channels=("urine_output", "blood_loss"),
    )
