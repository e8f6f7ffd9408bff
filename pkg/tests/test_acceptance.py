"""Acceptance suite: full-scale checks of the two-stage generator.

Every test in this module ends by printing one line of the form

    [acceptance NN] <name>: PASS|FAIL - <measured numbers>

so the complete run reads as a scoreboard.  Tests 01-05 and 11 are
self-contained and fast; tests 06-10 share trained full-scale artifacts
(2000 training molecules, N in 4..16, d_r=64, representation net 6x256,
EGNN 4x128, 500 diffusion steps) built once by the ``base_run`` fixture;
test 12 reruns a complete small pipeline twice and compares bytes.

Trained artifacts are cached on disk under $REPMOLGEN_ACCEPTANCE_CACHE
(default: <system tmp>/repmolgen-acceptance-cache), keyed by a digest of the
package sources and the experiment configuration.  A cold run builds
everything (budget: under two hours on one core); warm reruns only sample
and evaluate.  Deleting the cache directory forces a cold run; it is safe to
delete at any time because every artifact write is atomic.
"""
from __future__ import annotations

import hashlib
import json
import os
import shutil
import tempfile
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest

from repmolgen.config import ExperimentConfig
from repmolgen.data.alphabet import DEFAULT_ALPHABET
from repmolgen.data.molecule import Molecule, RigidMotion, apply_motion
from repmolgen.data.xyz import read_xyz
from repmolgen.encoder import EncoderConfig, GeoEncoder
from repmolgen.metrics import canonical_hash, wasserstein_distance_1d
from repmolgen.moldiff import (EgnnDenoiser, MolDenoiserConfig, MolSchedule,
                               infer_bonds, mol_sample_batch)
from repmolgen.nn.tensor import Tape, Tensor
from repmolgen.pipeline import (cmd_condition, cmd_gen_corpus,
                                cmd_pretrain_encoder, cmd_sample, cmd_train,
                                curve_decrease, file_sha256, load_encoder,
                                load_mol_model, load_rep_model, read_curve,
                                rep_dataset)
from repmolgen.pipeline import _decode_molecules, _save_model  # noqa: PLC2701
from repmolgen.repdiff import (RepDenoiser, RepDenoiserConfig, RepSchedule,
                               rep_sample)
from repmolgen.theory import (ScoreNet, bimodal_2d_instance,
                              check_loss_equivalence, check_subspace_dimension,
                              check_tv_nonincrease, two_component_instance)

from util import (finite_difference_grads, graphs_isomorphic_brute,
                  random_rotation_matrix, relative_error)

ALPHA = DEFAULT_ALPHABET


def _finish(idx: int, name: str, clauses: list[tuple[str, bool]]) -> None:
    """Print the scoreboard line for one criterion, then assert it."""
    ok = all(passed for _, passed in clauses)
    detail = "; ".join(f"{text} [{'ok' if passed else 'FAIL'}]"
                       for text, passed in clauses)
    line = f"[acceptance {idx:02d}] {name}: {'PASS' if ok else 'FAIL'} - {detail}"
    print(line)
    assert ok, line


# ---------------------------------------------------------------------------
# shared full-scale artifacts (criteria 06-10)
# ---------------------------------------------------------------------------

_CACHE_ROOT = Path(os.environ.get(
    "REPMOLGEN_ACCEPTANCE_CACHE",
    Path(tempfile.gettempdir()) / "repmolgen-acceptance-cache"))
_SRC_ROOT = Path(__file__).resolve().parents[1] / "src" / "repmolgen"

# Training lengths are the budget dial: the architecture, corpus size and
# diffusion step count are fixed, the optimization lengths below are chosen
# so that a cold run of the whole suite fits the stated time budget.
_ENCODER_STEPS = 3000
_REP_STEPS = 2500
_MOL_STEPS = 1500
_ARM_REP_STEPS = 600    # reduced, equal-budget arms for the encoder ablation
_ARM_MOL_STEPS = 300

_PERTURB_COUNT = 700    # molecules per conditioning arm (criterion 6)
_ABLATION_COUNT = 180   # molecules per encoder arm and seed (criterion 7)
_GRID_COUNT = 300       # molecules per grid cell (criterion 8)
_STRIDE_COUNT = 75      # molecules per stride arm and seed (criterion 9)
_COND_COUNT = 120       # molecules per property value and arm (criterion 10)

_CORPUS_SIZE = 2500     # 80/20 split -> 2000 training molecules

# Maintenance aid: REPMOLGEN_ACCEPTANCE_SMOKE=1 shrinks every training
# length and sample count so the whole suite executes its mechanics in
# minutes.  Criterion thresholds are NOT expected to hold at that scale
# (assertion failures are normal); it exists to catch plumbing errors before
# committing to a full cold run.  The cache digest covers these constants,
# so smoke artifacts never collide with full-scale ones.
if os.environ.get("REPMOLGEN_ACCEPTANCE_SMOKE") == "1":
    _ENCODER_STEPS, _REP_STEPS, _MOL_STEPS = 60, 80, 60
    _ARM_REP_STEPS, _ARM_MOL_STEPS = 40, 30
    _PERTURB_COUNT, _ABLATION_COUNT, _GRID_COUNT = 24, 16, 20
    _STRIDE_COUNT, _COND_COUNT = 6, 8
    _CORPUS_SIZE = 240


def _base_mapping() -> dict:
    return {
        "seed": 0,
        "corpus": {"n_molecules": _CORPUS_SIZE, "n_min": 4, "n_max": 16},
        "encoder": {"d_r": 64, "layers": 3, "hidden": 64, "n_rbf": 16,
                    "r_max": 6.0, "steps": _ENCODER_STEPS, "batch_size": 24,
                    "lr": 2e-3},
        "rep": {"blocks": 6, "hidden": 256, "cond_width": 64, "t_emb_dim": 32,
                "n_steps": 500, "train_steps": _REP_STEPS, "batch_size": 64,
                "lr": 1e-3},
        # sample_steps=50 is the evaluation stride: generated-sample quality
        # is measured with 50 of the 500 diffusion steps so the suite fits
        # the time budget; criterion 9 verifies full-vs-strided explicitly.
        "mol": {"layers": 4, "hidden": 128, "t_emb_dim": 32, "n_steps": 500,
                "train_steps": _MOL_STEPS, "batch_size": 16, "lr": 1e-3,
                "sigma_rep": 0.3, "p_fake": 0.1, "sample_steps": 50},
        "metrics": {"reference_fraction": 0.2, "cond_bins": 32},
    }


def _config(**over) -> ExperimentConfig:
    mapping = _base_mapping()
    for dotted, value in over.items():
        section, _, key = dotted.partition(".")
        if key:
            mapping[section][key] = value
        else:
            mapping[section] = value
    return ExperimentConfig.from_mapping(mapping)


def _source_digest() -> str:
    h = hashlib.sha256()
    for path in sorted(_SRC_ROOT.rglob("*.py")):
        rel = path.relative_to(_SRC_ROOT).as_posix()
        if "__pycache__" in rel or rel in {"cli.py", "theory.py"}:
            continue
        h.update(rel.encode())
        h.update(path.read_bytes())
    h.update(json.dumps(_base_mapping(), sort_keys=True).encode())
    h.update(str((_ARM_REP_STEPS, _ARM_MOL_STEPS, _PERTURB_COUNT,
                  _ABLATION_COUNT, _GRID_COUNT, _STRIDE_COUNT,
                  _COND_COUNT)).encode())
    return h.hexdigest()[:16]


def _seed_run_dir(src_dir: Path, dst_dir: Path, cfg: ExperimentConfig,
                  extra: tuple[str, ...] = ()) -> None:
    """Start a derived run directory from an existing one: copy the corpus
    (and any listed artifacts) so only the stages under test are retrained."""
    from repmolgen.pipeline import ensure_run_dir
    ensure_run_dir(cfg, dst_dir)
    rels = ("corpus/train.xyz", "corpus/reference.xyz") + extra
    for rel in rels:
        src = src_dir / rel
        dst = dst_dir / rel
        if src.exists() and not dst.exists():
            dst.parent.mkdir(parents=True, exist_ok=True)
            shutil.copy2(src, dst)


@pytest.fixture(scope="session")
def base_run():
    """Full-scale pipeline run shared by criteria 06-10 (cached on disk)."""
    cfg = _config()
    run_dir = _CACHE_ROOT / _source_digest() / "base"
    run_dir.mkdir(parents=True, exist_ok=True)
    from repmolgen.pipeline import RunPaths
    paths = RunPaths(run_dir)
    if not paths.corpus_train.exists():
        cmd_gen_corpus(cfg, run_dir)
    if not paths.encoder_ckpt.exists():
        cmd_pretrain_encoder(cfg, run_dir)
    if not paths.rep_ckpt.exists():
        cmd_train(cfg, run_dir, which="rep")
    if not paths.mol_ckpt.exists():
        cmd_train(cfg, run_dir, which="mol")

    train_mols = read_xyz(paths.corpus_train, ALPHA)
    encoder = load_encoder(paths)
    rep_model, rep_schedule = load_rep_model(paths.rep_ckpt)
    mol_model, mol_schedule = load_mol_model(paths.mol_ckpt)
    reps, counts, props = rep_dataset(cfg, paths)
    return SimpleNamespace(cfg=cfg, run_dir=run_dir, paths=paths,
                           train_mols=train_mols, encoder=encoder,
                           rep_model=rep_model, rep_schedule=rep_schedule,
                           mol_model=mol_model, mol_schedule=mol_schedule,
                           train_reps=reps, train_sizes=counts.astype(int),
                           train_props=props)


# ---------------------------------------------------------------------------
# criterion 01: symmetry suite
# ---------------------------------------------------------------------------


def _random_molecule(rng, n=None) -> Molecule:
    n = int(rng.integers(4, 17)) if n is None else n
    coords = rng.standard_normal((n, 3)) * 1.5
    types = np.zeros((n, ALPHA.n_elements))
    types[np.arange(n), rng.integers(0, ALPHA.n_elements, size=n)] = 1.0
    return Molecule(coords, types)


def test_01_symmetry_suite():
    rng = np.random.default_rng(101)
    cases = 100

    enc = GeoEncoder(EncoderConfig(d_r=16, layers=2, hidden=24, n_rbf=10,
                                   r_max=6.0), rng, n_elements=ALPHA.n_elements)
    inv_err = 0.0
    for _ in range(cases):
        m = _random_molecule(rng)
        base_rep = enc.encode(m)
        g = RigidMotion(random_rotation_matrix(rng), rng.standard_normal(3))
        moved = enc.encode(apply_motion(m, g))
        perm = rng.permutation(m.n_atoms)
        permuted = enc.encode(Molecule(m.coords[perm], m.types[perm]))
        inv_err = max(inv_err,
                      float(np.abs(moved - base_rep).max()),
                      float(np.abs(permuted - base_rep).max()))

    model = EgnnDenoiser(MolDenoiserConfig(n_elements=ALPHA.n_elements, d_r=16,
                                           layers=2, hidden=24, t_emb_dim=8),
                         rng)
    for _, p in model.store.items():
        p.data += rng.standard_normal(p.data.shape) * 0.1
    equi_err = 0.0
    com_err = 0.0
    for _ in range(cases):
        n = int(rng.integers(4, 17))
        zx = rng.standard_normal((1, n, 3))
        zx -= zx.mean(axis=1, keepdims=True)
        zh = rng.standard_normal((1, n, ALPHA.n_elements))
        t = rng.uniform(0.05, 1.0, size=1)
        r = rng.standard_normal(16)
        rep = np.broadcast_to(r, (1, 16))
        ex, eh = model.forward(zx, zh, t, rep)
        rot = random_rotation_matrix(rng)
        ex_r, eh_r = model.forward(zx @ rot.T, zh, t, rep)
        perm = rng.permutation(n)
        ex_p, eh_p = model.forward(zx[:, perm], zh[:, perm], t, rep)
        equi_err = max(equi_err,
                       float(np.abs(ex_r.data - ex.data @ rot.T).max()),
                       float(np.abs(eh_r.data - eh.data).max()),
                       float(np.abs(ex_p.data - ex.data[:, perm]).max()),
                       float(np.abs(eh_p.data - eh.data[:, perm]).max()))
        com_err = max(com_err, float(np.abs(ex.data.mean(axis=1)).max()))

    _finish(1, "symmetry suite", [
        (f"encoder invariance max err {inv_err:.2e} < 1e-8", inv_err < 1e-8),
        (f"denoiser equivariance max err {equi_err:.2e} < 1e-8",
         equi_err < 1e-8),
        (f"zero-CoM closure max err {com_err:.2e} < 1e-9", com_err < 1e-9),
    ])


# ---------------------------------------------------------------------------
# criterion 02: finite-difference gradient checks for every layer
# ---------------------------------------------------------------------------


def _fd_worst_layer(forward_scalar, store, step=1e-5):
    """Analytic vs central-difference gradients; returns the worst relative
    error over parameter tensors (one tensor per layer weight/bias)."""
    store.zero_grad()
    with Tape() as tape:
        loss = forward_scalar()
    tape.backward(loss)
    analytic = {name: (np.zeros_like(p.data) if p.grad is None
                       else p.grad.copy())
                for name, p in store.items()}
    tape.clear()
    fd = finite_difference_grads(lambda: forward_scalar().item(), store,
                                 step=step)
    return max(relative_error(analytic[name], fd[name])
               for name in analytic)


def test_02_gradient_checks():
    rng = np.random.default_rng(202)
    worst: dict[str, float] = {}

    enc = GeoEncoder(EncoderConfig(d_r=6, layers=2, hidden=8, n_rbf=5,
                                   r_max=6.0), rng, n_elements=ALPHA.n_elements)
    mol_in = _random_molecule(rng, n=5)
    probe = Tensor(rng.standard_normal(6))

    def enc_loss():
        rep = enc.embed_tensors(Tensor(mol_in.coords[None]),
                                Tensor(mol_in.types[None]))
        return (rep * probe).sum()

    worst["encoder"] = _fd_worst_layer(enc_loss, enc.store)

    rep_cfg = RepDenoiserConfig(d_r=6, blocks=2, hidden=10, cond_width=6,
                                t_emb_dim=8, n_min=4, n_max=16)
    rep_net = RepDenoiser(rep_cfg, rng)
    x_in = rng.standard_normal((3, 6))
    counts = np.array([4, 9, 16])
    t_in = np.array([0.2, 0.5, 0.9])
    rw = Tensor(rng.standard_normal((3, 6)))

    def rep_loss():
        out = rep_net.forward(x_in, t_in, counts)
        return (out * rw).sum()

    worst["rep denoiser"] = _fd_worst_layer(rep_loss, rep_net.store)

    mol_net = EgnnDenoiser(MolDenoiserConfig(n_elements=ALPHA.n_elements,
                                             d_r=6, layers=2, hidden=8,
                                             t_emb_dim=8), rng)
    for _, p in mol_net.store.items():
        p.data += rng.standard_normal(p.data.shape) * 0.05
    zx = rng.standard_normal((2, 5, 3))
    zx -= zx.mean(axis=1, keepdims=True)
    zh = rng.standard_normal((2, 5, ALPHA.n_elements))
    tt = np.array([0.3, 0.8])
    rr = rng.standard_normal((2, 6))
    wx = Tensor(rng.standard_normal((2, 5, 3)))
    wh = Tensor(rng.standard_normal((2, 5, ALPHA.n_elements)))

    def mol_loss_scalar():
        ex, eh = mol_net.forward(zx, zh, tt, rr)
        return (ex * wx).sum() + (eh * wh).sum()

    worst["EGNN denoiser"] = _fd_worst_layer(mol_loss_scalar, mol_net.store)

    score_net = ScoreNet(2, 2, 8, rng)
    sx = rng.standard_normal((4, 2))
    sr = rng.standard_normal((4, 2))
    st = rng.uniform(0.1, 1.0, size=4)
    sw = Tensor(rng.standard_normal((4, 2)))

    def score_loss():
        return (score_net.forward(sx, sr, st) * sw).sum()

    worst["score net"] = _fd_worst_layer(score_loss, score_net.store)

    bar = 1e-3
    _finish(2, "gradient checks", [
        (f"{name} worst layer rel err {err:.2e} < {bar:g}", err < bar)
        for name, err in worst.items()
    ])


# ---------------------------------------------------------------------------
# criterion 03: the two training targets give the same gradients
# ---------------------------------------------------------------------------


def test_03_loss_equivalence_oracle():
    dist = two_component_instance()
    rng = np.random.default_rng(303)
    net = ScoreNet(dist.k, dist.r_dim, 16, rng)
    out = check_loss_equivalence(dist, net, rng,
                                 schedule=RepSchedule.linear(100),
                                 samples=200_000)
    c_err = abs(out["c_mc"] - out["c_closed_form"])
    _finish(3, "loss equivalence", [
        (f"gradient agreement {out['grad_rel']:.4f} < 0.05",
         out["grad_rel"] < 0.05),
        (f"|C_mc - C_closed| {c_err:.4f} <= 3x CI {3 * out['c_mc_ci']:.4f}",
         c_err <= 3.0 * out["c_mc_ci"]),
    ])


# ---------------------------------------------------------------------------
# criterion 04: conditioning does not increase total-variation error
# ---------------------------------------------------------------------------


def test_04_tv_nonincrease():
    dist = bimodal_2d_instance()          # complete representation: r = x
    rng = np.random.default_rng(404)
    out = check_tv_nonincrease(dist, 500, rng, train_steps=2000,
                               sample_count=1_000_000, bins=100)
    ci = max(out["ci_uncond"], out["ci_cond"])
    _finish(4, "TV non-increase", [
        ("comparison conclusive", not out["inconclusive"]),
        (f"TV_cond {out['tv_cond']:.4f} <= TV_uncond {out['tv_uncond']:.4f}"
         f" + 2x CI {2 * ci:.4f}",
         out["tv_cond"] <= out["tv_uncond"] + 2.0 * ci),
        (f"complete-representation TV_cond {out['tv_cond']:.4f} < 0.05",
         out["tv_cond"] < 0.05),
    ])


# ---------------------------------------------------------------------------
# criterion 05: rotating every injected noise draw rotates the output
# ---------------------------------------------------------------------------


def test_05_noise_rotation_pairing():
    rng = np.random.default_rng(505)
    cfg = MolDenoiserConfig(n_elements=ALPHA.n_elements, d_r=16, layers=2,
                            hidden=24, t_emb_dim=8)
    model = EgnnDenoiser(cfg, rng)
    for _, p in model.store.items():
        p.data += rng.standard_normal(p.data.shape) * 0.1
    schedule = MolSchedule.polynomial(500, power=2.0)
    reps = np.broadcast_to(rng.standard_normal(16), (1, 16)).copy()
    rotations = [random_rotation_matrix(rng) for _ in range(20)]

    def source(rot):
        g = np.random.default_rng(5050)

        def draw(shape):
            noise = g.standard_normal(shape)
            if rot is not None and shape[-1] == 3:
                return noise @ rot.T
            return noise

        return draw

    ref = mol_sample_batch(model, reps, 8, schedule,
                           np.random.default_rng(0), noise_source=source(None))[0]
    worst = 0.0
    types_ok = True
    for rot in rotations:
        out = mol_sample_batch(model, reps, 8, schedule,
                               np.random.default_rng(0),
                               noise_source=source(rot))[0]
        worst = max(worst, float(np.abs(out.coords - ref.coords @ rot.T).max()))
        types_ok = types_ok and np.array_equal(out.types, ref.types)

    _finish(5, "paired-chain rotation", [
        (f"20 rotations, max coordinate deviation {worst:.2e} < 1e-6",
         worst < 1e-6),
        ("atom types unchanged", types_ok),
    ])


# ---------------------------------------------------------------------------
# criterion 11: metric implementations against independent oracles
# ---------------------------------------------------------------------------


def test_11_metric_oracles():
    rng = np.random.default_rng(111)
    from scipy.stats import wasserstein_distance as scipy_w1

    w1_err = 0.0
    for _ in range(50):
        a = rng.standard_normal(int(rng.integers(2, 400))) * rng.uniform(0.5, 3)
        b = rng.standard_normal(int(rng.integers(2, 400))) + rng.uniform(-2, 2)
        w1_err = max(w1_err, abs(wasserstein_distance_1d(a, b)
                                 - float(scipy_w1(a, b))))

    from repmolgen.data.corpus import CorpusConfig, generate_toy_corpus
    mols = generate_toy_corpus(CorpusConfig(n_molecules=60, n_min=4, n_max=8),
                               rng)
    infos = []
    for m in mols:
        symbols = [ALPHA.elements[i].symbol for i in m.type_indices]
        infos.append((canonical_hash(m, ALPHA), symbols, infer_bonds(m, ALPHA)))
    # Independent uniqueness count: partition by exhaustive isomorphism.
    classes: list[tuple[list[str], list, int]] = []
    for _, symbols, bonds in infos:
        for k, (ref_sym, ref_bonds, _) in enumerate(classes):
            if graphs_isomorphic_brute(symbols, bonds, ref_sym, ref_bonds):
                classes[k] = (ref_sym, ref_bonds, classes[k][2] + 1)
                break
        else:
            classes.append((symbols, bonds, 1))
    hash_unique = len({h for h, _, _ in infos})
    iso_unique = len(classes)
    # Hash must also be blind to atom order and rigid motion.
    perm_ok = True
    for m in mols[:20]:
        perm = rng.permutation(m.n_atoms)
        g = RigidMotion(random_rotation_matrix(rng), rng.standard_normal(3))
        moved = apply_motion(Molecule(m.coords[perm], m.types[perm]), g)
        perm_ok = perm_ok and (canonical_hash(moved, ALPHA)
                               == canonical_hash(m, ALPHA))

    ranks_ok = True
    rank_detail = []
    for n in (4, 7, 16):
        sub = check_subspace_dimension(n, 400, rng)
        ranks_ok = ranks_ok and (sub["rank"] == 3 * (n - 1)
                                 == sub["expected_rank"])
        rank_detail.append(f"N={n}:{sub['rank']}")

    _finish(11, "metric oracles", [
        (f"W1 vs sorted/LP oracle max err {w1_err:.2e} < 1e-9", w1_err < 1e-9),
        (f"hash uniqueness {hash_unique} == exhaustive isomorphism "
         f"{iso_unique}", hash_unique == iso_unique),
        ("hash invariant to atom order and rigid motion", perm_ok),
        (f"centred-noise subspace rank {' '.join(rank_detail)} == 3(N-1)",
         ranks_ok),
    ])


# ---------------------------------------------------------------------------
# shared evaluation helpers for the trained-model criteria
# ---------------------------------------------------------------------------


_EVAL_STEPS = 50    # evaluation stride of the 500-step reverse chain


def _atom_stability_of(mol_model, mol_schedule, reps, sizes, seed,
                       steps=_EVAL_STEPS):
    rng = np.random.default_rng([9000, seed])
    mols = _decode_molecules(mol_model, mol_schedule, reps, sizes, rng, 0.0,
                             steps)
    from repmolgen.metrics import atom_stability
    return atom_stability(mols, ALPHA)


def _matched_training_rows(base, sizes, seed):
    """One training-set row per requested size, so the two conditioning
    sources in criterion 6 share their size multiset exactly."""
    rng = np.random.default_rng([9301, seed])
    rows = np.array([int(rng.choice(np.flatnonzero(base.train_sizes == n)))
                     for n in sizes])
    return base.train_reps[rows]


def _conditioning_gap(base, mol_model, mol_schedule, count, seed):
    """Atom-stability gap between conditioning on encoder outputs of real
    training molecules and on sampler-generated representations.  Sizes and
    reverse-chain noise are shared between the two arms (common random
    numbers), so the gap isolates the conditioning source."""
    rng = np.random.default_rng([9300, seed])
    sizes = rng.choice(base.train_sizes, size=count, replace=True)
    reps_train = _matched_training_rows(base, sizes, seed)
    reps_samp = rep_sample(base.rep_model, sizes, base.rep_schedule,
                           base.cfg.rep.lowtemp(),
                           np.random.default_rng([9302, seed]))
    stab_train = _atom_stability_of(mol_model, mol_schedule, reps_train,
                                    sizes, seed)
    stab_samp = _atom_stability_of(mol_model, mol_schedule, reps_samp,
                                   sizes, seed)
    return stab_train - stab_samp, stab_train, stab_samp


def _derived_mol_model(base, name: str, **cfg_overrides):
    """Molecule generator retrained from the base corpus and encoder with
    modified training settings; cached next to the base run."""
    cfg = _config(**cfg_overrides)
    run_dir = _CACHE_ROOT / _source_digest() / name
    run_dir.mkdir(parents=True, exist_ok=True)
    from repmolgen.pipeline import RunPaths
    paths = RunPaths(run_dir)
    _seed_run_dir(base.run_dir, run_dir, cfg,
                  ("checkpoints/encoder.ckpt", "checkpoints/rep_dataset.bin"))
    if not paths.mol_ckpt.exists():
        cmd_train(cfg, run_dir, which="mol")
    model, schedule = load_mol_model(paths.mol_ckpt)
    return model, schedule


# ---------------------------------------------------------------------------
# criterion 06: representation perturbation closes the train/sample gap
# ---------------------------------------------------------------------------


def test_06_representation_perturbation(base_run):
    overfit_model, overfit_schedule = _derived_mol_model(
        base_run, "sigma0", **{"mol.sigma_rep": 0.0})
    gap0, tr0, sp0 = _conditioning_gap(base_run, overfit_model,
                                       overfit_schedule, _PERTURB_COUNT, 6)
    gap3, tr3, sp3 = _conditioning_gap(base_run, base_run.mol_model,
                                       base_run.mol_schedule, _PERTURB_COUNT, 6)
    _finish(6, "representation perturbation", [
        (f"sigma_rep=0 gap {gap0 * 100:.1f}pt (train {tr0:.3f} vs sampler "
         f"{sp0:.3f}) >= 3pt", gap0 >= 0.03),
        (f"sigma_rep=0.3 gap {gap3 * 100:.1f}pt (train {tr3:.3f} vs sampler "
         f"{sp3:.3f}) <= 1pt", gap3 <= 0.01),
    ])


# ---------------------------------------------------------------------------
# criterion 07: pretrained vs random frozen encoder
# ---------------------------------------------------------------------------


def _encoder_ablation_arm(base, enc_kind: str, seed: int) -> dict:
    """Train the full two-stage system at a reduced equal budget with either
    the pretrained encoder or a randomly initialized frozen one, then sample
    and report metrics.  The same sampling seed pairs the two arms."""
    import dataclasses

    cfg = _config(seed=seed, **{"rep.train_steps": _ARM_REP_STEPS,
                                "mol.train_steps": _ARM_MOL_STEPS})
    run_dir = _CACHE_ROOT / _source_digest() / f"enc_{enc_kind}_seed{seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    from repmolgen.pipeline import RunPaths
    paths = RunPaths(run_dir)
    if enc_kind == "pretrained":
        _seed_run_dir(base.run_dir, run_dir, cfg,
                      ("checkpoints/encoder.ckpt",
                       "checkpoints/rep_dataset.bin"))
    else:
        _seed_run_dir(base.run_dir, run_dir, cfg)
        if not paths.encoder_ckpt.exists():
            enc_cfg = cfg.encoder.model_config()
            enc = GeoEncoder(enc_cfg, np.random.default_rng([7, seed]),
                             n_elements=ALPHA.n_elements)
            _save_model(paths.encoder_ckpt, enc.store, {
                "kind": "encoder",
                "n_elements": ALPHA.n_elements,
                "config": dataclasses.asdict(enc_cfg),
                "curve_decrease": 0.0,
            })
    if not paths.rep_ckpt.exists():
        cmd_train(cfg, run_dir, which="rep")
    if not paths.mol_ckpt.exists():
        cmd_train(cfg, run_dir, which="mol")
    report_path = paths.sample_report("eval")
    if not report_path.exists():
        cmd_sample(cfg, run_dir, count=_ABLATION_COUNT, seed=seed, tag="eval")
    return json.loads(report_path.read_text())


def test_07_pretrained_vs_random_encoder(base_run):
    gaps = []
    detail = []
    for seed in (0, 1, 2):
        pre = _encoder_ablation_arm(base_run, "pretrained", seed)
        rand = _encoder_ablation_arm(base_run, "random", seed)
        gap = pre["mol_stability"] - rand["mol_stability"]
        gaps.append(gap)
        detail.append(f"seed {seed}: {pre['mol_stability']:.3f} vs "
                      f"{rand['mol_stability']:.3f} ({gap * 100:+.1f}pt)")
    mean_gap = float(np.mean(gaps))
    _finish(7, "pretrained vs random encoder", [
        ("stability strictly higher in all seeds: " + "; ".join(detail),
         all(g > 0 for g in gaps)),
        (f"mean stability gap {mean_gap * 100:.1f}pt >= 3pt",
         mean_gap >= 0.03),
    ])


# ---------------------------------------------------------------------------
# criterion 08: guidance weight and low temperature trade diversity for
# stability monotonically
# ---------------------------------------------------------------------------


def test_08_guidance_temperature_grid(base_run):
    temps = [1.0, 0.7, 0.5]
    weights = [0.0, 1.0, 2.0]
    cells: dict[tuple[float, float], tuple[float, float]] = {}
    for temp in temps:
        for w in weights:
            tag = f"grid_T{temp:g}_w{w:g}"
            report_path = base_run.paths.sample_report(tag)
            if not report_path.exists():
                cmd_sample(base_run.cfg, base_run.run_dir, count=_GRID_COUNT,
                           seed=0, temperature=temp, guidance_w=w, tag=tag)
            rep = json.loads(report_path.read_text())
            cells[(temp, w)] = (rep["mol_stability"], rep["valid_and_unique"])

    tol = 0.01
    violations = []
    for (ta, wa), (sa, ua) in cells.items():
        for (tb, wb), (sb, ub) in cells.items():
            if (tb, wb) == (ta, wa) or tb > ta or wb < wa:
                continue   # only moves with lower temperature / higher weight
            if sb < sa - tol:
                violations.append(f"stability {sa:.3f}->{sb:.3f} at "
                                  f"T{ta:g},w{wa:g}->T{tb:g},w{wb:g}")
            if ub > ua + tol:
                violations.append(f"uniqueness {ua:.3f}->{ub:.3f} at "
                                  f"T{ta:g},w{wa:g}->T{tb:g},w{wb:g}")
    corner_a = cells[(1.0, 0.0)]
    corner_b = cells[(0.5, 2.0)]
    _finish(8, "guidance/temperature grid", [
        (f"stability {corner_a[0]:.3f}->{corner_b[0]:.3f}, uniqueness "
         f"{corner_a[1]:.3f}->{corner_b[1]:.3f} across the grid diagonal; "
         f"monotone within 1pt ({len(violations)} violations"
         + ("" if not violations else ": " + "; ".join(violations[:4])) + ")",
         not violations),
    ])


# ---------------------------------------------------------------------------
# criterion 09: a tenth of the reverse steps costs the conditioned model
# little and the unconditional baseline more
# ---------------------------------------------------------------------------


def _paired_stride_stability(model, schedule, reps, sizes, chain_seed,
                             few_steps):
    """Atom stability at the full step count and at a stride, with the
    strided chain replaying the full chain's noise at the shared times."""
    from repmolgen.metrics import atom_stability

    full_out, few_out = [], []
    times_full = schedule.strided_times(schedule.n_steps)
    times_few = schedule.strided_times(few_steps)
    master = np.random.default_rng([9400, chain_seed])
    for n in sorted(set(sizes.tolist())):
        rows = np.flatnonzero(sizes == n)
        group_reps = reps[rows]
        gauss = np.random.default_rng(master.integers(2 ** 63))
        recorded: dict = {}
        state = {"i": 0}

        def record(shape):
            i = state["i"]
            state["i"] += 1
            noise = gauss.standard_normal(shape)
            if i < 2:
                recorded["init", i] = noise
            else:
                t = times_full[len(times_full) - 1 - (i - 2) // 2]
                recorded[int(t), (i - 2) % 2] = noise
            return noise

        full_out += mol_sample_batch(model, group_reps, n, schedule,
                                     np.random.default_rng(0),
                                     noise_source=record)
        state_few = {"i": 0}

        def replay(shape):
            i = state_few["i"]
            state_few["i"] += 1
            if i < 2:
                return recorded["init", i]
            t = times_few[len(times_few) - 1 - (i - 2) // 2]
            return recorded[int(t), (i - 2) % 2]

        few_out += mol_sample_batch(model, group_reps, n, schedule,
                                    np.random.default_rng(0), steps=few_steps,
                                    noise_source=replay)
    return atom_stability(full_out, ALPHA), atom_stability(few_out, ALPHA)


def test_09_fewer_step_generation(base_run):
    uncond_model, uncond_schedule = _derived_mol_model(
        base_run, "uncond", **{"mol.p_fake": 1.0})
    few = base_run.cfg.mol.n_steps // 10
    losses_cond, losses_unc = [], []
    for seed in (0, 1, 2):
        rng = np.random.default_rng([9410, seed])
        sizes = rng.choice(base_run.train_sizes, size=_STRIDE_COUNT,
                           replace=True)
        reps_cond = rep_sample(base_run.rep_model, sizes,
                               base_run.rep_schedule,
                               base_run.cfg.rep.lowtemp(),
                               np.random.default_rng([9411, seed]))
        reps_unc = np.broadcast_to(uncond_model.fake_rep.data,
                                   (len(sizes),
                                    uncond_model.config.d_r)).copy()
        c_full, c_few = _paired_stride_stability(
            base_run.mol_model, base_run.mol_schedule, reps_cond, sizes,
            seed, few)
        u_full, u_few = _paired_stride_stability(
            uncond_model, uncond_schedule, reps_unc, sizes, seed, few)
        losses_cond.append(c_full - c_few)
        losses_unc.append(u_full - u_few)
    loss_cond = float(np.mean(losses_cond))
    loss_unc = float(np.mean(losses_unc))
    per_seed = ", ".join(f"{c * 100:+.1f}/{u * 100:+.1f}pt"
                         for c, u in zip(losses_cond, losses_unc))
    _finish(9, "fewer-step generation", [
        (f"conditioned model loses {loss_cond * 100:.1f}pt at {few} of "
         f"{base_run.cfg.mol.n_steps} steps <= 3pt", loss_cond <= 0.03),
        (f"unconditional baseline loses more ({loss_unc * 100:.1f}pt; "
         f"per seed cond/uncond: {per_seed})", loss_cond < loss_unc),
    ])


# ---------------------------------------------------------------------------
# criterion 10: property-conditional generation through representations
# ---------------------------------------------------------------------------


def test_10_conditional_generation(base_run):
    paths = base_run.paths
    if not paths.condition_report.exists():
        values = [round(float(v), 3) for v in
                  np.quantile(base_run.train_props, [0.25, 0.5, 0.75])]
        cmd_condition(base_run.cfg, base_run.run_dir, values=values,
                      count=_COND_COUNT, seed=0)
    report = json.loads(paths.condition_report.read_text())
    cond = float(np.mean(report["conditional_mae"]))
    natoms = float(np.mean(report["natoms_mae"]))
    uncond = float(np.mean(report["unconditional_mae"]))
    _finish(10, "conditional generation", [
        (f"conditional MAE {cond:.3f} < size-only baseline {natoms:.3f}",
         cond < natoms),
        (f"conditional MAE {cond:.3f} <= 70% of unconditional {uncond:.3f}",
         cond <= 0.7 * uncond),
        ("molecule checkpoint untouched by the property retrain",
         report["mol_checkpoint_unchanged"] is True),
    ])


# ---------------------------------------------------------------------------
# criterion 12: the whole pipeline is byte-reproducible
# ---------------------------------------------------------------------------


def test_12_pipeline_determinism(tmp_path):
    cfg = ExperimentConfig.from_mapping({
        "seed": 3,
        "corpus": {"n_molecules": 100, "n_min": 4, "n_max": 9},
        "encoder": {"d_r": 16, "layers": 1, "hidden": 16, "n_rbf": 8,
                    "r_max": 6.0, "steps": 40, "batch_size": 8},
        "rep": {"blocks": 2, "hidden": 32, "cond_width": 16, "t_emb_dim": 8,
                "n_steps": 60, "train_steps": 50, "batch_size": 16},
        "mol": {"layers": 2, "hidden": 24, "t_emb_dim": 8, "n_steps": 60,
                "train_steps": 40, "batch_size": 8},
        "metrics": {"reference_fraction": 0.25, "cond_bins": 8},
    })
    trees = []
    for name in ("first", "second"):
        run_dir = tmp_path / name
        cmd_gen_corpus(cfg, run_dir)
        cmd_pretrain_encoder(cfg, run_dir)
        cmd_train(cfg, run_dir, which="both")
        cmd_sample(cfg, run_dir, count=5, seed=3, tag="samples")
        cmd_condition(cfg, run_dir, values=[1.5], count=3, seed=3)
        tree = {p.relative_to(run_dir).as_posix(): file_sha256(p)
                for p in sorted(run_dir.rglob("*"))
                if p.is_file() and p.name != "run.log"}
        trees.append(tree)
    same_names = set(trees[0]) == set(trees[1])
    diff = [k for k in trees[0] if trees[0][k] != trees[1].get(k)]
    _finish(12, "pipeline determinism", [
        (f"rerun produced the same {len(trees[0])} artifacts", same_names),
        ("all artifact bytes identical"
         + ("" if not diff else f" (differs: {', '.join(diff[:5])})"),
         not diff),
    ])


# ---------------------------------------------------------------------------
# full-scale pretraining curve (pipeline contract, measured on the shared run)
# ---------------------------------------------------------------------------


def test_encoder_pretraining_curve_halves(base_run):
    losses = read_curve(base_run.paths.encoder_curve)
    decrease = curve_decrease(losses)
    ok = decrease >= 0.5
    line = (f"[acceptance --] encoder pretext curve: "
            f"{'PASS' if ok else 'FAIL'} - smoothed decrease "
            f"{decrease:.1%} (target >= 50%)")
    print(line)
    assert ok, line
