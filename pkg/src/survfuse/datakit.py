"""Cohort data model, CSV ingestion, split generation, synthetic cohorts.

File formats (all CSV, UTF-8):
  clinical    columns sample_id, patient_id, time_days, event, grade
  expression  first column sample_id, remaining headers are gene symbols
  embedding   first column sample_id, remaining headers are dimension indices

Floats are written with repr() so every load/save round-trip is bit-exact.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .genegraph import GeneGraph
from .numcore import RngStream

# Fixed stream ids so different random purposes never share a sequence.
_STREAM_SPLITS = 11
_STREAM_SYNTH = 12

DEFAULT_GRADE_NAMES = ("II", "III", "IV")


@dataclass(frozen=True)
class Sample:
    """One tissue sample: identifiers, optional modalities, outcome labels."""

    sample_id: str
    patient_id: str
    time: float
    event: int
    grade: int
    expression: np.ndarray | None = None
    image_embedding: np.ndarray | None = None


@dataclass(frozen=True)
class Cohort:
    samples: tuple[Sample, ...]
    gene_order: tuple[str, ...]
    grade_names: tuple[str, ...] = DEFAULT_GRADE_NAMES

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        object.__setattr__(self, "gene_order", tuple(self.gene_order))
        object.__setattr__(self, "grade_names", tuple(self.grade_names))
        ids = [s.sample_id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate sample ids in cohort")
        k = len(self.grade_names)
        p = len(self.gene_order)
        emb_width = None
        for s in self.samples:
            if s.expression is None and s.image_embedding is None:
                raise DataError(f"sample {s.sample_id!r} has no modality data")
            if s.expression is not None and len(s.expression) != p:
                raise DataError(
                    f"sample {s.sample_id!r}: expression width "
                    f"{len(s.expression)} != gene count {p}")
            if s.image_embedding is not None:
                if emb_width is None:
                    emb_width = len(s.image_embedding)
                elif len(s.image_embedding) != emb_width:
                    raise DataError(
                        f"sample {s.sample_id!r}: embedding width "
                        f"{len(s.image_embedding)} != {emb_width}")
            if not 0 <= s.grade < k:
                raise DataError(
                    f"sample {s.sample_id!r}: grade {s.grade} outside [0, {k})")
            if s.time < 0:
                raise DataError(f"sample {s.sample_id!r}: negative time")
            if s.event not in (0, 1):
                raise DataError(f"sample {s.sample_id!r}: event must be 0/1")
        object.__setattr__(
            self, "_index", {s.sample_id: i for i, s in enumerate(self.samples)})

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def sample_ids(self) -> tuple[str, ...]:
        return tuple(s.sample_id for s in self.samples)

    @property
    def patient_ids(self) -> tuple[str, ...]:
        """Distinct patients in first-appearance order."""
        seen: dict[str, None] = {}
        for s in self.samples:
            seen.setdefault(s.patient_id, None)
        return tuple(seen)

    def get(self, sample_id: str) -> Sample:
        try:
            return self.samples[self._index[sample_id]]
        except KeyError:
            raise DataError(f"unknown sample id {sample_id!r}") from None

    def _rows(self, ids) -> list[Sample]:
        return [self.get(i) for i in ids]

    def expression_matrix(self, ids) -> np.ndarray:
        rows = self._rows(ids)
        for s in rows:
            if s.expression is None:
                raise DataError(f"sample {s.sample_id!r} has no expression data")
        return np.stack([s.expression for s in rows]).astype(np.float64)

    def embedding_matrix(self, ids) -> np.ndarray:
        rows = self._rows(ids)
        for s in rows:
            if s.image_embedding is None:
                raise DataError(f"sample {s.sample_id!r} has no image embedding")
        return np.stack([s.image_embedding for s in rows]).astype(np.float64)

    def times(self, ids) -> np.ndarray:
        return np.asarray([s.time for s in self._rows(ids)], dtype=np.float64)

    def events(self, ids) -> np.ndarray:
        return np.asarray([s.event for s in self._rows(ids)], dtype=np.int64)

    def grades(self, ids) -> np.ndarray:
        return np.asarray([s.grade for s in self._rows(ids)], dtype=np.int64)

    def gene_subset(self, keep) -> "Cohort":
        """Restrict expression columns to ``keep`` (in the given order)."""
        index = {g: i for i, g in enumerate(self.gene_order)}
        missing = [g for g in keep if g not in index]
        if missing:
            raise DataError(f"genes not in cohort: {missing[:5]}")
        cols = np.asarray([index[g] for g in keep], dtype=np.intp)
        samples = tuple(
            replace(s, expression=s.expression[cols])
            if s.expression is not None else s
            for s in self.samples)
        return Cohort(samples=samples, gene_order=tuple(keep),
                      grade_names=self.grade_names)


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

_CLINICAL_COLUMNS = ("sample_id", "patient_id", "time_days", "event", "grade")


def _parse_float(token: str, where: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise DataError(f"{where}: unparseable number {token!r}") from None
    if not math.isfinite(value):
        raise DataError(f"{where}: non-finite number {token!r}")
    return value


def _parse_int(token: str, where: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise DataError(f"{where}: unparseable integer {token!r}") from None


def _read_feature_csv(path) -> tuple[tuple[str, ...], dict[str, np.ndarray]]:
    """Shared reader for expression/embedding files: header names the
    feature columns, each body row is sample_id followed by the values."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path.name}: empty file") from None
        if len(header) < 2:
            raise DataError(f"{path.name}: header needs sample_id + features")
        features = tuple(header[1:])
        rows: dict[str, np.ndarray] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path.name}:{lineno}: expected {len(header)} columns, "
                    f"got {len(row)}")
            sid = row[0]
            if sid in rows:
                raise DataError(f"{path.name}:{lineno}: duplicate sample {sid!r}")
            values = [_parse_float(tok, f"{path.name}:{lineno}")
                      for tok in row[1:]]
            rows[sid] = np.asarray(values, dtype=np.float64)
    return features, rows


def read_clinical(path) -> tuple[list[str], dict[str, tuple[str, float, int, int]]]:
    """Parse a clinical table; returns sample ids in file order and a map
    sample_id -> (patient_id, time_days, event, grade)."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path.name}: empty file") from None
        if tuple(header) != _CLINICAL_COLUMNS:
            raise DataError(
                f"{path.name}: expected columns "
                f"{','.join(_CLINICAL_COLUMNS)}, got {','.join(header)}")
        clinical: dict[str, tuple[str, float, int, int]] = {}
        order: list[str] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(_CLINICAL_COLUMNS):
                raise DataError(
                    f"{path.name}:{lineno}: expected "
                    f"{len(_CLINICAL_COLUMNS)} columns, got {len(row)}")
            where = f"{path.name}:{lineno}"
            sid, pid = row[0], row[1]
            if sid in clinical:
                raise DataError(f"{where}: duplicate sample id {sid!r}")
            clinical[sid] = (pid, _parse_float(row[2], where),
                             _parse_int(row[3], where), _parse_int(row[4], where))
            order.append(sid)
    return order, clinical


def load_cohort(clinical_path, expression_path=None, embedding_path=None,
                grade_names: tuple[str, ...] = DEFAULT_GRADE_NAMES) -> Cohort:
    """Join the clinical table with whichever modality files are given.

    Modality rows must reference known sample ids; clinical rows with no
    modality data at all are dropped (reported via a warning).
    """
    order, clinical = read_clinical(clinical_path)

    genes: tuple[str, ...] = ()
    expr_rows: dict[str, np.ndarray] = {}
    if expression_path is not None:
        genes, expr_rows = _read_feature_csv(expression_path)
        unknown = [sid for sid in expr_rows if sid not in clinical]
        if unknown:
            raise DataError(
                f"{Path(expression_path).name}: sample {unknown[0]!r} "
                "not in clinical table")
    emb_rows: dict[str, np.ndarray] = {}
    if embedding_path is not None:
        _, emb_rows = _read_feature_csv(embedding_path)
        unknown = [sid for sid in emb_rows if sid not in clinical]
        if unknown:
            raise DataError(
                f"{Path(embedding_path).name}: sample {unknown[0]!r} "
                "not in clinical table")

    samples: list[Sample] = []
    dropped: list[str] = []
    for sid in order:
        pid, time, event, grade = clinical[sid]
        expr = expr_rows.get(sid)
        emb = emb_rows.get(sid)
        if expr is None and emb is None:
            dropped.append(sid)
            continue
        samples.append(Sample(sample_id=sid, patient_id=pid, time=time,
                              event=event, grade=grade, expression=expr,
                              image_embedding=emb))
    if dropped:
        warnings.warn(
            f"dropped {len(dropped)} clinical rows with no modality data "
            f"(first: {dropped[0]!r})", stacklevel=2)
    if not samples:
        raise DataError("no samples with modality data")
    return Cohort(samples=tuple(samples), gene_order=genes,
                  grade_names=tuple(grade_names))


def save_cohort(cohort: Cohort, clinical_path, expression_path=None,
                embedding_path=None) -> None:
    with open(clinical_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CLINICAL_COLUMNS)
        for s in cohort.samples:
            writer.writerow([s.sample_id, s.patient_id, repr(float(s.time)),
                             s.event, s.grade])
    if expression_path is not None:
        with open(expression_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sample_id", *cohort.gene_order])
            for s in cohort.samples:
                if s.expression is not None:
                    writer.writerow(
                        [s.sample_id, *(repr(float(v)) for v in s.expression)])
    if embedding_path is not None:
        width = next(
            (len(s.image_embedding) for s in cohort.samples
             if s.image_embedding is not None), 0)
        with open(embedding_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sample_id", *map(str, range(width))])
            for s in cohort.samples:
                if s.image_embedding is not None:
                    writer.writerow(
                        [s.sample_id,
                         *(repr(float(v)) for v in s.image_embedding)])


# ---------------------------------------------------------------------------
# Standardization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExpressionStats:
    gene_order: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray


def standardize_expression(cohort: Cohort, train_ids) -> tuple[Cohort, ExpressionStats]:
    """Per-gene z-score fitted on the training samples only and applied to
    every sample; zero-variance genes map to 0 everywhere."""
    train_ids = list(train_ids)
    if not train_ids:
        raise ConfigError("standardization needs non-empty training ids")
    x = cohort.expression_matrix(train_ids)
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    safe = np.where(std > 0, std, 1.0)
    live = std > 0

    def transform(v: np.ndarray) -> np.ndarray:
        return np.where(live, (v - mean) / safe, 0.0)

    samples = tuple(
        replace(s, expression=transform(s.expression))
        if s.expression is not None else s
        for s in cohort.samples)
    stats = ExpressionStats(gene_order=cohort.gene_order, mean=mean, std=std)
    return Cohort(samples=samples, gene_order=cohort.gene_order,
                  grade_names=cohort.grade_names), stats


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSet:
    """Train/test sample-id partitions for each repetition."""

    repetitions: tuple[tuple[tuple[str, ...], tuple[str, ...]], ...]
    seed: int
    train_frac: float
    grouping: str

    def save(self, path) -> None:
        payload = {
            "seed": self.seed,
            "train_frac": self.train_frac,
            "grouping": self.grouping,
            "repetitions": [
                {"train": list(tr), "test": list(te)}
                for tr, te in self.repetitions],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "SplitSet":
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        try:
            reps = tuple(
                (tuple(rep["train"]), tuple(rep["test"]))
                for rep in payload["repetitions"])
            return cls(repetitions=reps, seed=int(payload["seed"]),
                       train_frac=float(payload["train_frac"]),
                       grouping=str(payload["grouping"]))
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed split file {path}: {exc}") from None


def gen_splits(cohort, reps: int, train_frac: float = 0.8,
               grouping: str = "patient", seed: int = 0) -> SplitSet:
    """Random train/test partitions, one per repetition.

    Units are patients by default so no patient straddles a split; pass
    grouping='sample' to shuffle raw samples instead. The cut point is
    round(train_frac * units), half away from zero. ``cohort`` may also be
    a plain iterable of (sample_id, patient_id) pairs.
    """
    if not 0.0 < train_frac < 1.0:
        raise ConfigError(f"train_frac must be in (0, 1), got {train_frac}")
    if reps < 1:
        raise ConfigError(f"reps must be >= 1, got {reps}")
    if grouping not in ("patient", "sample"):
        raise ConfigError(f"grouping must be 'patient' or 'sample', got {grouping!r}")
    if isinstance(cohort, Cohort):
        pairs = [(s.sample_id, s.patient_id) for s in cohort.samples]
    else:
        pairs = [(str(sid), str(pid)) for sid, pid in cohort]
    if grouping == "patient":
        seen: dict[str, None] = {}
        for _, pid in pairs:
            seen.setdefault(pid, None)
        units = tuple(seen)
    else:
        units = tuple(sid for sid, _ in pairs)
    n_train = int(math.floor(train_frac * len(units) + 0.5))
    if n_train == 0 or n_train == len(units):
        raise ConfigError(
            f"train_frac {train_frac} yields an empty side for "
            f"{len(units)} {grouping} units")
    stream = RngStream(seed, _STREAM_SPLITS)
    repetitions = []
    for rep in range(reps):
        perm = stream.generator(rep).permutation(len(units))
        train_units = {units[i] for i in perm[:n_train]}

        def unit_of(sid: str, pid: str) -> str:
            return pid if grouping == "patient" else sid

        train_ids = tuple(sid for sid, pid in pairs
                          if unit_of(sid, pid) in train_units)
        test_ids = tuple(sid for sid, pid in pairs
                         if unit_of(sid, pid) not in train_units)
        repetitions.append((train_ids, test_ids))
    return SplitSet(repetitions=tuple(repetitions), seed=seed,
                    train_frac=train_frac, grouping=grouping)


# ---------------------------------------------------------------------------
# Synthetic cohorts
# ---------------------------------------------------------------------------

# Distance between adjacent subtype activity means, in within-subtype
# standard deviations.
_SUBTYPE_SEPARATION = 4.0


@dataclass(frozen=True)
class SynthTruth:
    """Ground truth behind a synthetic cohort, for oracle checks."""

    risk: np.ndarray
    beta: np.ndarray
    causal_index: np.ndarray
    event_time: np.ndarray
    censor_time: np.ndarray


def _solve_censor_rate(hazards: np.ndarray, target: float) -> float:
    """Censoring-time rate mu such that the expected censored fraction,
    mean(mu / (hazard + mu)) for exponential death and censoring times,
    equals the target. Monotone in mu, solved by bisection in log space."""
    lo, hi = 1e-300, 1e300

    def frac(mu: float) -> float:
        return float(np.mean(mu / (hazards + mu)))

    for _ in range(300):
        mid = math.sqrt(lo * hi)
        if frac(mid) < target:
            lo = mid
        else:
            hi = mid
    return math.sqrt(lo * hi)


def synth_gen(patients: int, genes: int, causal_genes: int,
              censor_rate: float, label_noise: float, seed: int,
              embedding_dim: int = 1000, embedding_noise: float = 0.3,
              risk_scale: float = 10.0,
              background_edges_per_gene: float = 3.0,
              causal_coexpression: float = 0.8,
              module_projection_gain: float = 5.0,
              ) -> tuple[Cohort, GeneGraph, SynthTruth]:
    """Cohort with a planted linear hazard signal on a known gene subgraph.

    The causal genes behave like a co-expressed pathway module: each one
    loads on a shared per-patient activity factor with correlation
    ``causal_coexpression`` (0 makes expression fully iid), the rest of the
    expression matrix is iid standard normal, and the module forms a random
    tree in the interaction graph buried among random background edges.
    True risk is a positively weighted linear score over the module,
    survival times are exponential with rate exp(risk), censoring times are
    exponential with a rate solved to hit the target censored fraction in
    expectation, grade is the within-cohort risk tertile with optional
    label corruption, and the image embedding is a noisy random linear
    projection of expression in which the module rows carry
    ``module_projection_gain`` times the background weight (morphology
    reads the disease program more directly than any single transcript).
    Deterministic per seed.
    """
    if patients < 3:
        raise ConfigError(f"need >= 3 patients, got {patients}")
    if genes < 1 or causal_genes < 1 or causal_genes > genes:
        raise ConfigError(
            f"need 1 <= causal_genes <= genes, got {causal_genes}/{genes}")
    if not 0.0 <= censor_rate < 1.0:
        raise ConfigError(f"censor_rate must be in [0, 1), got {censor_rate}")
    if not 0.0 <= label_noise < 1.0:
        raise ConfigError(f"label_noise must be in [0, 1), got {label_noise}")
    if embedding_dim < 1:
        raise ConfigError(f"embedding_dim must be >= 1, got {embedding_dim}")
    if not 0.0 <= causal_coexpression < 1.0:
        raise ConfigError(
            f"causal_coexpression must be in [0, 1), got {causal_coexpression}")

    stream = RngStream(seed, _STREAM_SYNTH)
    gen_graph = stream.generator(0)
    gen_x = stream.generator(1)
    gen_beta = stream.generator(2)
    gen_time = stream.generator(3)
    gen_censor = stream.generator(4)
    gen_label = stream.generator(5)
    gen_embed = stream.generator(6)

    width = max(4, len(str(genes)))
    names = tuple(f"G{i + 1:0{width}d}" for i in range(genes))
    causal = np.sort(gen_graph.choice(genes, size=causal_genes, replace=False))

    edges: set[tuple[str, str]] = set()

    def add_edge(i: int, j: int) -> None:
        if i != j:
            a, b = names[i], names[j]
            edges.add((a, b) if a <= b else (b, a))

    # Spanning tree keeps the causal genes in one connected component.
    for k in range(1, causal_genes):
        add_edge(int(causal[k]), int(causal[int(gen_graph.integers(0, k))]))
    n_background = int(round(background_edges_per_gene * genes))
    pairs = gen_graph.integers(0, genes, size=(n_background, 2))
    for i, j in pairs:
        add_edge(int(i), int(j))
    graph = GeneGraph(genes=names, edges=frozenset(edges))

    x = gen_x.standard_normal((patients, genes))
    if causal_coexpression > 0.0:
        # Module activity is trimodal (three expression subtypes, the way
        # tumor grades behave) and standardized so per-gene variance
        # stays 1 after mixing.
        subtype = gen_x.integers(0, 3, size=patients)
        raw = (_SUBTYPE_SEPARATION * (subtype - 1.0)
               + gen_x.standard_normal(patients))
        activity = raw / math.sqrt(1.0 + _SUBTYPE_SEPARATION ** 2 * 2.0 / 3.0)
        rho = causal_coexpression
        x[:, causal] = (rho * activity[:, None]
                        + math.sqrt(1.0 - rho * rho) * x[:, causal])
    # One-directional module: higher activity means higher hazard.
    beta_vals = np.abs(gen_beta.standard_normal(causal_genes))
    beta_vals *= risk_scale / np.linalg.norm(beta_vals)
    beta = np.zeros(genes)
    beta[causal] = beta_vals
    risk = x @ beta

    hazards = np.exp(risk)
    event_time = gen_time.exponential(1.0, size=patients) / hazards
    if censor_rate > 0.0:
        mu = _solve_censor_rate(hazards, censor_rate)
        censor_time = gen_censor.exponential(1.0, size=patients) / mu
    else:
        censor_time = np.full(patients, np.inf)
    observed = np.minimum(event_time, censor_time)
    event = (event_time <= censor_time).astype(np.int64)

    p33, p66 = np.percentile(risk, 33), np.percentile(risk, 66)
    grade = np.where(risk <= p33, 0, np.where(risk <= p66, 1, 2)).astype(np.int64)
    if label_noise > 0.0:
        corrupt = gen_label.random(patients) < label_noise
        offset = gen_label.integers(1, 3, size=patients)
        grade = np.where(corrupt, (grade + offset) % 3, grade)

    projection = gen_embed.standard_normal((genes, embedding_dim)) / math.sqrt(genes)
    projection[causal] *= module_projection_gain
    embedding = x @ projection
    if embedding_noise > 0.0:
        embedding = embedding + embedding_noise * gen_embed.standard_normal(
            embedding.shape)

    samples = tuple(
        Sample(sample_id=f"P{i + 1:04d}-S01", patient_id=f"P{i + 1:04d}",
               time=float(observed[i]), event=int(event[i]),
               grade=int(grade[i]), expression=x[i],
               image_embedding=embedding[i])
        for i in range(patients))
    cohort = Cohort(samples=samples, gene_order=names,
                    grade_names=DEFAULT_GRADE_NAMES)
    truth = SynthTruth(risk=risk, beta=beta, causal_index=causal,
                       event_time=event_time, censor_time=censor_time)
    return cohort, graph, truth
