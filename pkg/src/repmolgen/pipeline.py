"""Experiment orchestration: run directories, artifacts, and stage commands.

A run directory is bound to one configuration (snapshotted as config.json on
first use) and holds every artifact a rerun needs::

    config.json
    corpus/train.xyz  corpus/reference.xyz
    checkpoints/*.ckpt  checkpoints/*_curve.csv  checkpoints/rep_dataset.bin
    samples/<tag>.xyz
    reports/<tag>.json  reports/condition.json
    logs/run.log

Every stage derives its random generator from ``(config.seed, stage id)``, so
stages are mutually independent: training the two generators in either order
(or concurrently) produces bit-identical checkpoints, and a full rerun with
the same seed reproduces every artifact byte for byte.  All files are written
to a temporary name and renamed into place.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from repmolgen.config import ExperimentConfig
from repmolgen.data.alphabet import DEFAULT_ALPHABET, ElementAlphabet
from repmolgen.data.corpus import generate_toy_corpus
from repmolgen.data.molecule import Molecule
from repmolgen.data.xyz import read_xyz, write_xyz
from repmolgen.encoder import EncoderConfig, GeoEncoder, pretrain_denoising
from repmolgen.errors import ConfigError, DependencyError, ParseError
from repmolgen.metrics import (
    MetricReport,
    canonical_hash,
    compute_report,
    conditional_mae,
    toy_property,
)
from repmolgen.moldiff import (
    EgnnDenoiser,
    MolDenoiserConfig,
    MolSchedule,
    mol_sample_batch,
    mol_train_step,
)
from repmolgen.repdiff import (
    RepDenoiser,
    RepDenoiserConfig,
    RepSchedule,
    rep_sample,
    rep_sample_conditional,
    rep_train_step,
)

log = logging.getLogger("repmolgen.pipeline")

# Stage identifiers mixed into the per-stage random seeds.
_STAGE_CORPUS = 0
_STAGE_ENCODER = 1
_STAGE_REP = 2
_STAGE_MOL = 3
_STAGE_SAMPLE = 4
_STAGE_CONDITION_TRAIN = 5
_STAGE_CONDITION_SAMPLE = 6

RUN_ROOT_ENV = "REPMOLGEN_RUN_ROOT"


# ---------------------------------------------------------------------------
# deterministic binary array container
# ---------------------------------------------------------------------------

_MAGIC = b"RMGBIN1\n"


def _write_bytes_atomic(path: Path, blob: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    tmp.replace(path)


def _write_text_atomic(path: Path, text: str) -> None:
    _write_bytes_atomic(path, text.encode())


def save_arrays(path, arrays: dict, meta: dict) -> None:
    """Write named arrays plus a JSON meta block; byte-deterministic."""
    entries = []
    payload = bytearray()
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        entries.append({"name": name, "dtype": arr.dtype.str,
                        "shape": list(arr.shape)})
        payload += arr.tobytes()
    header = json.dumps({"meta": meta, "arrays": entries},
                        sort_keys=True).encode()
    blob = _MAGIC + len(header).to_bytes(8, "big") + header + bytes(payload)
    _write_bytes_atomic(Path(path), blob)


def load_arrays(path) -> tuple[dict, dict]:
    path = Path(path)
    if not path.exists():
        raise DependencyError(f"missing artifact {path}")
    raw = path.read_bytes()
    try:
        if raw[:len(_MAGIC)] != _MAGIC:
            raise ValueError("bad magic bytes")
        start = len(_MAGIC)
        hlen = int.from_bytes(raw[start:start + 8], "big")
        header = json.loads(raw[start + 8:start + 8 + hlen])
        arrays: dict = {}
        offset = start + 8 + hlen
        for entry in header["arrays"]:
            dtype = np.dtype(entry["dtype"])
            shape = tuple(int(s) for s in entry["shape"])
            nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
            chunk = raw[offset:offset + nbytes]
            if len(chunk) != nbytes:
                raise ValueError("truncated array payload")
            arrays[entry["name"]] = np.frombuffer(chunk, dtype=dtype
                                                  ).reshape(shape).copy()
            offset += nbytes
        if offset != len(raw):
            raise ValueError("trailing bytes after array payload")
        return arrays, header["meta"]
    except (ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ParseError(f"corrupt artifact file {path}: {exc}") from exc


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _save_model(path: Path, store, meta: dict) -> None:
    save_arrays(path, {name: t.data for name, t in store.items()}, meta)


def _restore_params(store, arrays: dict, source: Path) -> None:
    names = list(store.names())
    missing = [n for n in names if n not in arrays]
    extra = [n for n in arrays if n not in set(names)]
    if missing or extra:
        raise ConfigError(
            f"checkpoint {source} does not match the configured architecture "
            f"(missing={missing[:3]}, unexpected={extra[:3]})")
    for name, tensor in store.items():
        arr = arrays[name]
        if tuple(arr.shape) != tuple(tensor.data.shape):
            raise ConfigError(
                f"checkpoint {source}: parameter '{name}' has shape "
                f"{arr.shape}, expected {tensor.data.shape}")
        np.copyto(tensor.data, arr)


# ---------------------------------------------------------------------------
# run directory layout
# ---------------------------------------------------------------------------


class RunPaths:
    """All artifact locations inside one run directory."""

    def __init__(self, root):
        self.root = Path(root)
        self.config_snapshot = self.root / "config.json"
        self.corpus_train = self.root / "corpus" / "train.xyz"
        self.corpus_reference = self.root / "corpus" / "reference.xyz"
        ckpt = self.root / "checkpoints"
        self.encoder_ckpt = ckpt / "encoder.ckpt"
        self.encoder_curve = ckpt / "encoder_curve.csv"
        self.rep_ckpt = ckpt / "rep.ckpt"
        self.rep_curve = ckpt / "rep_curve.csv"
        self.mol_ckpt = ckpt / "mol.ckpt"
        self.mol_curve = ckpt / "mol_curve.csv"
        self.rep_cond_ckpt = ckpt / "rep_cond.ckpt"
        self.rep_cond_curve = ckpt / "rep_cond_curve.csv"
        self.rep_cache = ckpt / "rep_dataset.bin"
        self.samples_dir = self.root / "samples"
        self.reports_dir = self.root / "reports"
        self.condition_report = self.reports_dir / "condition.json"
        self.log_file = self.root / "logs" / "run.log"

    def sample_xyz(self, tag: str) -> Path:
        return self.samples_dir / f"{tag}.xyz"

    def sample_report(self, tag: str) -> Path:
        return self.reports_dir / f"{tag}.json"


def resolve_run_dir(cli_value, config_path) -> Path:
    """Run directory: explicit flag, else $REPMOLGEN_RUN_ROOT/<config stem>."""
    if cli_value:
        return Path(cli_value)
    root = os.environ.get(RUN_ROOT_ENV, "runs")
    return Path(root) / Path(config_path).stem


def ensure_run_dir(cfg: ExperimentConfig, run_dir) -> RunPaths:
    """Create the layout and bind the directory to this configuration."""
    paths = RunPaths(run_dir)
    for sub in (paths.corpus_train.parent, paths.encoder_ckpt.parent,
                paths.samples_dir, paths.reports_dir, paths.log_file.parent):
        sub.mkdir(parents=True, exist_ok=True)
    snapshot = cfg.to_json()
    if paths.config_snapshot.exists():
        if paths.config_snapshot.read_text() != snapshot:
            raise ConfigError(
                f"run directory {paths.root} was created with a different "
                "configuration; use a fresh directory for a new config")
    else:
        _write_text_atomic(paths.config_snapshot, snapshot)
    return paths


def _log(paths: RunPaths, message: str) -> None:
    log.info(message)
    with paths.log_file.open("a") as fh:
        fh.write(message + "\n")


def _refuse_overwrite(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise ConfigError(f"{path} already exists; pass --force to overwrite")


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise DependencyError(f"missing {path}; {hint}")
    return path


def _stage_rng(cfg: ExperimentConfig, stage: int, *extra: int):
    return np.random.default_rng([cfg.seed, stage, *extra])


# ---------------------------------------------------------------------------
# training curves
# ---------------------------------------------------------------------------


def write_curve(path: Path, losses) -> None:
    rows = ["step,loss"]
    rows += [f"{i},{loss:.10g}" for i, loss in enumerate(losses)]
    _write_text_atomic(path, "\n".join(rows) + "\n")


def read_curve(path: Path) -> np.ndarray:
    rows = Path(path).read_text().strip().splitlines()[1:]
    return np.array([float(r.split(",")[1]) for r in rows])


def curve_decrease(losses) -> float:
    """Fractional decrease of the monotone-smoothed training curve.

    The curve is averaged over a short window, made monotone by a running
    minimum, and compared against the first window mean; a single lucky batch
    therefore cannot dominate the result.
    """
    losses = np.asarray(losses, dtype=np.float64)
    if losses.size < 2:
        return 0.0
    window = max(1, min(25, losses.size // 10))
    means = np.convolve(losses, np.ones(window) / window, mode="valid")
    smoothed = np.minimum.accumulate(means)
    if means[0] <= 0:
        return 0.0
    return float(max(0.0, 1.0 - smoothed[-1] / means[0]))


# ---------------------------------------------------------------------------
# corpus
# ---------------------------------------------------------------------------


def cmd_gen_corpus(cfg: ExperimentConfig, run_dir, force: bool = False
                   ) -> RunPaths:
    cfg.validate()
    paths = ensure_run_dir(cfg, run_dir)
    _refuse_overwrite(paths.corpus_train, force)
    rng = _stage_rng(cfg, _STAGE_CORPUS)
    mols = generate_toy_corpus(cfg.corpus, rng)
    perm = rng.permutation(len(mols))
    n_ref = round(cfg.metrics.reference_fraction * len(mols))
    reference = [mols[i] for i in perm[:n_ref]]
    train = [mols[i] for i in perm[n_ref:]]
    write_xyz(paths.corpus_train, train, DEFAULT_ALPHABET)
    write_xyz(paths.corpus_reference, reference, DEFAULT_ALPHABET)
    _log(paths, f"corpus generated: {len(train)} training molecules, "
                f"{len(reference)} reference molecules")
    return paths


def _load_corpus_train(paths: RunPaths) -> list[Molecule]:
    _require(paths.corpus_train, "run the gen-corpus command first")
    return read_xyz(paths.corpus_train, DEFAULT_ALPHABET)


# ---------------------------------------------------------------------------
# encoder
# ---------------------------------------------------------------------------


def cmd_pretrain_encoder(cfg: ExperimentConfig, run_dir, force: bool = False
                         ) -> Path:
    cfg.validate()
    paths = ensure_run_dir(cfg, run_dir)
    mols = _load_corpus_train(paths)
    _refuse_overwrite(paths.encoder_ckpt, force)
    rng = _stage_rng(cfg, _STAGE_ENCODER)
    encoder, losses = pretrain_denoising(
        mols, cfg.encoder.model_config(), rng,
        steps=cfg.encoder.steps, batch_size=cfg.encoder.batch_size,
        lr=cfg.encoder.lr, head_rounds=cfg.encoder.head_rounds)
    meta = {
        "kind": "encoder",
        "n_elements": encoder.n_elements,
        "config": dataclasses.asdict(cfg.encoder.model_config()),
        "curve_decrease": curve_decrease(losses),
    }
    _save_model(paths.encoder_ckpt, encoder.store, meta)
    write_curve(paths.encoder_curve, losses)
    _log(paths, f"encoder pretrained for {len(losses)} steps; smoothed loss "
                f"decrease {meta['curve_decrease']:.3f}")
    return paths.encoder_ckpt


def load_encoder(paths: RunPaths) -> GeoEncoder:
    _require(paths.encoder_ckpt, "run the pretrain-encoder command first")
    arrays, meta = load_arrays(paths.encoder_ckpt)
    config = EncoderConfig(**meta["config"])
    encoder = GeoEncoder(config, np.random.default_rng(0),
                         n_elements=int(meta["n_elements"]))
    _restore_params(encoder.store, arrays, paths.encoder_ckpt)
    encoder.freeze()
    return encoder


# ---------------------------------------------------------------------------
# representation dataset cache
# ---------------------------------------------------------------------------


def rep_dataset(cfg: ExperimentConfig, paths: RunPaths
                ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Encoded training corpus (reps, atom counts, toy properties), cached.

    The cache is keyed by the hashes of the encoder checkpoint and the corpus
    file; any mismatch triggers a rebuild.
    """
    _require(paths.encoder_ckpt, "run the pretrain-encoder command first")
    _require(paths.corpus_train, "run the gen-corpus command first")
    enc_sha = file_sha256(paths.encoder_ckpt)
    corpus_sha = file_sha256(paths.corpus_train)
    if paths.rep_cache.exists():
        try:
            arrays, meta = load_arrays(paths.rep_cache)
        except ParseError:
            arrays, meta = {}, {}
        if (meta.get("encoder_sha") == enc_sha
                and meta.get("corpus_sha") == corpus_sha
                and {"reps", "counts", "props"} <= set(arrays)):
            _log(paths, "representation dataset cache hit")
            return arrays["reps"], arrays["counts"], arrays["props"]
        _log(paths, "representation dataset cache stale; rebuilding")
    mols = _load_corpus_train(paths)
    encoder = load_encoder(paths)
    reps = encoder.encode_molecules(mols)
    counts = np.array([m.n_atoms for m in mols], dtype=np.int64)
    props = np.array([toy_property(m) for m in mols])
    save_arrays(paths.rep_cache, {"reps": reps, "counts": counts,
                                  "props": props},
                {"encoder_sha": enc_sha, "corpus_sha": corpus_sha})
    _log(paths, f"representation dataset built: {len(mols)} rows")
    return reps, counts, props


# ---------------------------------------------------------------------------
# generator training
# ---------------------------------------------------------------------------


def _train_rep_model(cfg: ExperimentConfig, paths: RunPaths, *,
                     with_property: bool, stage: int, ckpt: Path,
                     curve: Path) -> None:
    reps, counts, props = rep_dataset(cfg, paths)
    encoder = load_encoder(paths)
    model_cfg = cfg.rep.model_config(
        d_r=cfg.encoder.d_r, n_min=cfg.corpus.n_min, n_max=cfg.corpus.n_max,
        with_property=with_property)
    rng = _stage_rng(cfg, stage)
    model = RepDenoiser(model_cfg, rng)
    schedule = RepSchedule.linear(cfg.rep.n_steps, cfg.rep.beta_min,
                                  cfg.rep.beta_max)
    losses = []
    for _ in range(cfg.rep.train_steps):
        idx = rng.integers(0, len(reps), size=cfg.rep.batch_size)
        losses.append(rep_train_step(
            model, reps[idx], counts[idx], schedule, encoder, rng,
            lr=cfg.rep.lr, props=props[idx] if with_property else None))
    meta = {
        "kind": "rep",
        "config": dataclasses.asdict(model_cfg),
        "prop_range": list(model.prop_range) if model.prop_range else None,
        "schedule": {"n_steps": cfg.rep.n_steps, "beta_min": cfg.rep.beta_min,
                     "beta_max": cfg.rep.beta_max},
        "curve_decrease": curve_decrease(losses),
    }
    _save_model(ckpt, model.store, meta)
    write_curve(curve, losses)
    label = "conditional " if with_property else ""
    _log(paths, f"{label}representation generator trained for "
                f"{len(losses)} steps; final loss {losses[-1]:.4f}")


def _train_mol_model(cfg: ExperimentConfig, paths: RunPaths) -> None:
    reps, counts, _ = rep_dataset(cfg, paths)
    encoder = load_encoder(paths)
    mols = _load_corpus_train(paths)
    n_elements = mols[0].types.shape[1]
    model_cfg = cfg.mol.model_config(n_elements=n_elements,
                                     d_r=cfg.encoder.d_r)
    rng = _stage_rng(cfg, _STAGE_MOL)
    model = EgnnDenoiser(model_cfg, rng)
    schedule = MolSchedule.polynomial(cfg.mol.n_steps, cfg.mol.power)
    tricks = cfg.mol.tricks()

    by_size: dict[int, list[int]] = {}
    for i, m in enumerate(mols):
        by_size.setdefault(m.n_atoms, []).append(i)
    sizes = sorted(by_size)
    size_weights = np.array([len(by_size[s]) for s in sizes], dtype=np.float64)
    size_weights /= size_weights.sum()
    grouped = {
        s: (np.stack([mols[i].coords for i in by_size[s]]),
            np.stack([mols[i].types for i in by_size[s]]),
            reps[np.array(by_size[s])])
        for s in sizes
    }

    losses = []
    for _ in range(cfg.mol.train_steps):
        s = sizes[rng.choice(len(sizes), p=size_weights)]
        coords, types, reps_s = grouped[s]
        rows = rng.integers(0, len(coords), size=cfg.mol.batch_size)
        losses.append(mol_train_step(
            model, coords[rows], types[rows], reps_s[rows], schedule, tricks,
            rng, lr=cfg.mol.lr,
            encoder=encoder if tricks.rho > 0 else None))
    meta = {
        "kind": "mol",
        "config": dataclasses.asdict(model_cfg),
        "schedule": {"n_steps": cfg.mol.n_steps, "power": cfg.mol.power},
        "curve_decrease": curve_decrease(losses),
    }
    _save_model(paths.mol_ckpt, model.store, meta)
    write_curve(paths.mol_curve, losses)
    _log(paths, f"molecule generator trained for {len(losses)} steps; "
                f"final loss {losses[-1]:.4f}")


def cmd_train(cfg: ExperimentConfig, run_dir, which: str = "both",
              force: bool = False) -> RunPaths:
    cfg.validate()
    if which not in ("rep", "mol", "both"):
        raise ConfigError(f"--which must be rep, mol, or both, got {which!r}")
    paths = ensure_run_dir(cfg, run_dir)
    _require(paths.encoder_ckpt,
             "run the pretrain-encoder command before training")
    if which in ("rep", "both"):
        _refuse_overwrite(paths.rep_ckpt, force)
    if which in ("mol", "both"):
        _refuse_overwrite(paths.mol_ckpt, force)
    if which in ("rep", "both"):
        _train_rep_model(cfg, paths, with_property=False, stage=_STAGE_REP,
                         ckpt=paths.rep_ckpt, curve=paths.rep_curve)
    if which in ("mol", "both"):
        _train_mol_model(cfg, paths)
    return paths


# ---------------------------------------------------------------------------
# checkpoint loading for sampling
# ---------------------------------------------------------------------------


def load_rep_model(path: Path) -> tuple[RepDenoiser, RepSchedule]:
    arrays, meta = load_arrays(path)
    model_cfg = RepDenoiserConfig(**meta["config"])
    model = RepDenoiser(model_cfg, np.random.default_rng(0))
    _restore_params(model.store, arrays, path)
    if meta.get("prop_range"):
        model.prop_range = tuple(meta["prop_range"])
    sched = meta["schedule"]
    schedule = RepSchedule.linear(sched["n_steps"], sched["beta_min"],
                                  sched["beta_max"])
    return model, schedule


def load_mol_model(path: Path) -> tuple[EgnnDenoiser, MolSchedule]:
    arrays, meta = load_arrays(path)
    model_cfg = MolDenoiserConfig(**meta["config"])
    model = EgnnDenoiser(model_cfg, np.random.default_rng(0))
    _restore_params(model.store, arrays, path)
    sched = meta["schedule"]
    return model, MolSchedule.polynomial(sched["n_steps"], sched["power"])


# ---------------------------------------------------------------------------
# joint size/condition histogram
# ---------------------------------------------------------------------------


class JointSizeSampler:
    """Empirical joint distribution of atom count and a scalar condition.

    The condition axis is split into equal-mass quantile bins; drawing for a
    condition value resamples the atom counts observed in that value's bin.
    """

    def __init__(self, props, sizes, bins: int):
        props = np.asarray(props, dtype=np.float64)
        sizes = np.asarray(sizes, dtype=np.int64)
        if props.size == 0 or props.shape != sizes.shape:
            raise ConfigError("joint histogram needs matching non-empty "
                              "property and size arrays")
        bins = max(1, min(int(bins), props.size))
        quantiles = np.quantile(props, np.linspace(0.0, 1.0, bins + 1))
        self.edges = quantiles[1:-1]
        assignment = np.searchsorted(self.edges, props, side="right")
        self.pools = [sizes[assignment == b] for b in range(bins)]
        self._filled = [b for b, pool in enumerate(self.pools) if len(pool)]

    def pool_for(self, value: float) -> np.ndarray:
        b = int(np.searchsorted(self.edges, float(value), side="right"))
        if len(self.pools[b]) == 0:
            b = min(self._filled, key=lambda f: abs(f - b))
        return self.pools[b]

    def draw(self, value: float, count: int, rng: np.random.Generator
             ) -> np.ndarray:
        pool = self.pool_for(value)
        return rng.choice(pool, size=count, replace=True)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SampleResult:
    samples: Path
    report: Path
    metrics: MetricReport


def _decode_molecules(mol_model: EgnnDenoiser, mol_schedule: MolSchedule,
                      reps: np.ndarray, sizes: np.ndarray,
                      rng: np.random.Generator, w: float,
                      steps: int | None) -> list[Molecule]:
    """Run the molecule reverse chains grouped by atom count."""
    molecules: list[Molecule | None] = [None] * len(sizes)
    for n in sorted(set(int(s) for s in sizes)):
        idx = np.flatnonzero(sizes == n)
        batch = mol_sample_batch(mol_model, reps[idx], n, mol_schedule, rng,
                                 w=w, steps=steps)
        for j, m in zip(idx, batch):
            molecules[j] = m
    return list(molecules)


def cmd_sample(cfg: ExperimentConfig, run_dir, count: int,
               seed: int | None = None, condition: float | None = None,
               tag: str = "samples", temperature: float | None = None,
               psi: float | None = None, corrector_steps: int | None = None,
               guidance_w: float | None = None, steps: int | None = None
               ) -> SampleResult:
    cfg.validate()
    if count < 0:
        raise ConfigError("sample count must be >= 0")
    paths = ensure_run_dir(cfg, run_dir)
    train_mols = _load_corpus_train(paths)
    _require(paths.corpus_reference, "run the gen-corpus command first")
    reference = read_xyz(paths.corpus_reference, DEFAULT_ALPHABET)

    rep_path = paths.rep_ckpt
    if condition is not None and paths.rep_cond_ckpt.exists():
        rep_path = paths.rep_cond_ckpt
    _require(rep_path, "run the train command first")
    _require(paths.mol_ckpt, "run the train command first")
    rep_model, rep_schedule = load_rep_model(rep_path)
    if condition is not None and not rep_model.config.with_property:
        raise ConfigError(
            "a condition value was given but the representation generator is "
            "unconditional; run the condition command first")
    mol_model, mol_schedule = load_mol_model(paths.mol_ckpt)

    seed = cfg.seed if seed is None else int(seed)
    rng = _stage_rng(cfg, _STAGE_SAMPLE, seed)
    lowtemp = cfg.rep.lowtemp(temperature, psi, corrector_steps)
    w = cfg.mol.guidance_w if guidance_w is None else float(guidance_w)
    mol_steps = cfg.mol.sample_steps if steps is None else int(steps)

    sizes_corpus = np.array([m.n_atoms for m in train_mols], dtype=np.int64)
    samples: list[Molecule] = []
    if count > 0:
        if condition is None:
            sizes = rng.choice(sizes_corpus, size=count, replace=True)
            reps = rep_sample(rep_model, sizes, rep_schedule, lowtemp, rng)
        else:
            props = np.array([toy_property(m) for m in train_mols])
            sampler = JointSizeSampler(props, sizes_corpus,
                                       cfg.metrics.cond_bins)
            sizes = sampler.draw(condition, count, rng)
            reps, extrapolated = rep_sample_conditional(
                rep_model, condition, sizes, rep_schedule, lowtemp, rng)
            if extrapolated:
                _log(paths, f"condition value {condition} lies outside the "
                            "training property range (extrapolation)")
        samples = _decode_molecules(mol_model, mol_schedule, reps, sizes, rng,
                                    w, mol_steps)

    targets = None if condition is None else np.full(len(samples), condition)
    train_hashes = {canonical_hash(m, DEFAULT_ALPHABET) for m in train_mols}
    report = compute_report(samples, reference, DEFAULT_ALPHABET, seed,
                            training_hashes=train_hashes, targets=targets)
    xyz_path = paths.sample_xyz(tag)
    report_path = paths.sample_report(tag)
    write_xyz(xyz_path, samples, DEFAULT_ALPHABET)
    _write_text_atomic(report_path, report.to_json() + "\n")
    _log(paths, f"sampled {len(samples)} molecules -> {xyz_path.name}; "
                f"stability {report.mol_stability:.3f}")
    return SampleResult(xyz_path, report_path, report)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def cmd_eval(samples_path, reference_path, seed: int = 0,
             alphabet: ElementAlphabet = DEFAULT_ALPHABET) -> MetricReport:
    for p in (samples_path, reference_path):
        if not Path(p).exists():
            raise DependencyError(f"cannot read {p}")
    samples = read_xyz(samples_path, alphabet)
    reference = read_xyz(reference_path, alphabet)
    train_hashes = {canonical_hash(m, alphabet) for m in reference}
    return compute_report(samples, reference, alphabet, seed,
                          training_hashes=train_hashes)


# ---------------------------------------------------------------------------
# conditional workflow
# ---------------------------------------------------------------------------


def cmd_condition(cfg: ExperimentConfig, run_dir, values, count: int,
                  seed: int | None = None, force: bool = False) -> dict:
    """Retrain the representation generator with a property input and report
    conditional MAE against the analytic baselines.

    Only the representation checkpoint is (re)written; the molecule generator
    is reused untouched, which the report records via its file hash.
    """
    cfg.validate()
    values = [float(v) for v in values]
    if not values:
        raise ConfigError("condition needs at least one property value")
    if count < 1:
        raise ConfigError("condition sampling count must be >= 1")
    paths = ensure_run_dir(cfg, run_dir)
    _require(paths.mol_ckpt, "train the molecule generator first")
    _require(paths.rep_ckpt, "train the representation generator first")
    _refuse_overwrite(paths.rep_cond_ckpt, force)
    mol_sha_before = file_sha256(paths.mol_ckpt)

    _train_rep_model(cfg, paths, with_property=True,
                     stage=_STAGE_CONDITION_TRAIN, ckpt=paths.rep_cond_ckpt,
                     curve=paths.rep_cond_curve)

    train_mols = _load_corpus_train(paths)
    sizes_corpus = np.array([m.n_atoms for m in train_mols], dtype=np.int64)
    props = np.array([toy_property(m) for m in train_mols])
    sampler = JointSizeSampler(props, sizes_corpus, cfg.metrics.cond_bins)
    mean_prop_by_n = {int(n): float(props[sizes_corpus == n].mean())
                      for n in np.unique(sizes_corpus)}

    cond_model, rep_schedule = load_rep_model(paths.rep_cond_ckpt)
    uncond_model, _ = load_rep_model(paths.rep_ckpt)
    mol_model, mol_schedule = load_mol_model(paths.mol_ckpt)
    lowtemp = cfg.rep.lowtemp()
    w = cfg.mol.guidance_w
    seed = cfg.seed if seed is None else int(seed)
    rng = _stage_rng(cfg, _STAGE_CONDITION_SAMPLE, seed)

    cond_mae, uncond_mae, natoms_mae, random_mae = [], [], [], []
    mean_property, extrapolated = [], []
    for i, value in enumerate(values):
        sizes = sampler.draw(value, count, rng)
        reps, extrap = rep_sample_conditional(cond_model, value, sizes,
                                              rep_schedule, lowtemp, rng)
        mols_c = _decode_molecules(mol_model, mol_schedule, reps, sizes, rng,
                                   w, cfg.mol.sample_steps)
        targets = np.full(count, value)
        cond_mae.append(conditional_mae(mols_c, targets))
        mean_property.append(float(np.mean([toy_property(m) for m in mols_c])))
        extrapolated.append(bool(extrap))
        write_xyz(paths.sample_xyz(f"condition_{i}"), mols_c, DEFAULT_ALPHABET)

        sizes_u = rng.choice(sizes_corpus, size=count, replace=True)
        reps_u = rep_sample(uncond_model, sizes_u, rep_schedule, lowtemp, rng)
        mols_u = _decode_molecules(mol_model, mol_schedule, reps_u, sizes_u,
                                   rng, w, cfg.mol.sample_steps)
        uncond_mae.append(conditional_mae(mols_u, targets))

        pool = sampler.pool_for(value)
        natoms_mae.append(float(np.mean(
            [abs(value - mean_prop_by_n[int(n)]) for n in pool])))
        random_mae.append(float(np.abs(value - props).mean()))

    report = {
        "values": values,
        "count": int(count),
        "seed": int(seed),
        "conditional_mae": cond_mae,
        "unconditional_mae": uncond_mae,
        "natoms_mae": natoms_mae,
        "random_mae": random_mae,
        # The toy property is computed analytically from coordinates, so
        # re-measuring it is exact: the measurement-noise floor is zero.
        "floor_mae": 0.0,
        "mean_property": mean_property,
        "extrapolated": extrapolated,
        "mol_checkpoint_unchanged":
            file_sha256(paths.mol_ckpt) == mol_sha_before,
    }
    _write_text_atomic(paths.condition_report,
                       json.dumps(report, indent=2, sort_keys=True) + "\n")
    _log(paths, "conditional workflow finished; conditional MAE "
                + ", ".join(f"{v:.3f}" for v in cond_mae))
    return report
