"""Stage functions behind the CLI: scenes, distillation, training, estimation, evaluation."""
from __future__ import annotations

import csv
import logging
import os
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..checkpoint import load_checkpoint, save_checkpoint
from ..diffusion import IidmModel, Sample, TrainConfig, sample_density, train_iidm, write_loss_csv
from ..distill.blockwise import BlockwiseDistiller, train_teacher
from ..distill.eigenbasis import derive_eigenbasis, exact_pca_basis, mean_reconstruction_loss, orthonormality_error
from ..distill.spectra import mcev, select_channel_lengths, spectra_from_features
from ..distill.vgg import VGG_WIDTHS, Coder
from ..metrics import CSV_COLUMNS, MetricReport, evaluate
from ..nn import inference
from ..numerics import Tensor
from ..raster import Raster, forest, read_patch_table, read_raster, write_patch_csv, write_raster
from ..rng import derive_seed, stream
from ..synthetic import SyntheticScene, gen_synthetic_scene
from .baseline import fit_scenes, predict_scene
from .config import RunConfig, dump_config, int_list
from .features import Extractor, band_stats, dihedral, make_extractor, standardise_bands

log = logging.getLogger(__name__)

SCENE_FILES = ("imagery.ras", "canopy.ras", "mask.ras", "truth.ras", "patch_map.ras", "patches.csv")

# ablation toggle grid: (mask, vgg, kd_vgg, attention_mlp)
ABLATION_GRID = [
    (False, False, False, False),
    (False, True, False, False),
    (False, True, False, True),
    (False, False, True, False),
    (False, False, True, True),
    (False, False, False, True),
    (True, False, False, False),
    (True, True, False, False),
    (True, True, False, True),
    (True, False, True, False),
    (True, False, True, True),
    (True, False, False, True),
]
ABLATION_COLUMNS = ("no", "mask", "vgg", "kd_vgg", "attention_mlp", "status",
                    "mae", "rmse", "ssim", "psnr", "n_pixels")


class MissingInput(RuntimeError):
    """A stage was asked to run before the artifacts it reads exist."""


# ---------------------------------------------------------------- scenes

def scene_seed(seed, k):
    return derive_seed(seed, f"scene/{k}")


def generate_scenes(cfg: RunConfig):
    r = cfg.run
    return [gen_synthetic_scene(scene_seed(r.seed, k), r.size, r.size, r.n_patches, cfg.carbon)
            for k in range(r.n_scenes)]


def write_scene(scene: SyntheticScene, d):
    d = Path(d)
    d.mkdir(parents=True, exist_ok=True)
    write_raster(scene.imagery, d / "imagery.ras")
    write_raster(scene.canopy, d / "canopy.ras")
    write_raster(scene.mask, d / "mask.ras")
    write_raster(scene.truth_density, d / "truth.ras")
    write_raster(Raster(scene.patches.patch_map), d / "patch_map.ras")
    write_patch_csv(scene.patches, d / "patches.csv")


def read_scene(d) -> SyntheticScene:
    d = Path(d)
    missing = [f for f in SCENE_FILES if not (d / f).exists()]
    if missing:
        raise MissingInput(f"scene directory {d} lacks {', '.join(missing)}; run `gen` first")
    return SyntheticScene(read_raster(d / "imagery.ras"), read_raster(d / "canopy.ras"),
                          read_raster(d / "mask.ras"), read_patch_table(d / "patches.csv", d / "patch_map.ras"),
                          read_raster(d / "truth.ras"))


def scene_dirs(out):
    root = Path(out) / "scenes"
    dirs = sorted(root.glob("scene_*")) if root.is_dir() else []
    if len(dirs) < 2:
        raise MissingInput(f"no generated scenes under {root}; run `gen` first")
    return dirs


def gen_stage(cfg: RunConfig, out):
    scenes = generate_scenes(cfg)
    for k, sc in enumerate(scenes):
        write_scene(sc, Path(out) / "scenes" / f"scene_{k}")
    Path(out, "config.ini").write_text(dump_config(cfg))
    return scenes


def load_scenes(out):
    return [read_scene(d) for d in scene_dirs(out)]


def split(scenes):
    return scenes[:-1], scenes[-1]


def augmented(scenes):
    """Imagery, density and forest flags of every scene under the 8 dihedral maps."""
    ims, dens, masks = [], [], []
    for sc in scenes:
        im = sc.imagery.data.astype(np.float64)
        d = sc.truth_density.band.astype(np.float64)
        m = forest(sc.mask)
        for k in range(8):
            ims.append(dihedral(im, k))
            dens.append(dihedral(d, k))
            masks.append(dihedral(m, k))
    return ims, dens, masks


# ---------------------------------------------------------------- distillation

@dataclass
class DistillResult:
    teacher: Coder
    student: Coder
    widths: tuple
    report: list      # per-layer dicts
    traces: dict


def distill_stage(cfg: RunConfig, train_scenes, out=None) -> DistillResult:
    dc, seed = cfg.distill, cfg.run.seed
    ims, _, _ = augmented(train_scenes)
    mean, std = band_stats(ims)
    x = standardise_bands(ims, mean, std)
    teacher = Coder(VGG_WIDTHS, x.shape[1], stream(seed, "distill/teacher-init"))
    traces = {"teacher": train_teacher(teacher, x, steps=dc.teacher_steps, lr=dc.lr,
                                       batch_size=dc.batch_size, seed=seed)}
    with inference(teacher):
        taps = [t.data for t in teacher.encode(Tensor(x))]
    feats = {n: [t[i].reshape(t.shape[1], -1) for i in range(len(t))] for n, t in enumerate(taps, 1)}
    spectra = spectra_from_features(feats)
    if dc.widths == "auto":
        widths = select_channel_lengths(spectra, dc.target)
    else:
        widths = int_list(dc.widths)
    bases, report = {}, []
    for n in range(1, 5):
        basis = derive_eigenbasis(feats[n], widths[n - 1], batch_size=dc.batch_size, epochs=dc.epochs,
                                  seed=seed, label=f"distill/eigenbasis{n}")
        bases[n] = basis
        oracle = exact_pca_basis(feats[n], widths[n - 1])
        report.append({
            "layer": n, "teacher_channels": VGG_WIDTHS[n - 1], "student_channels": widths[n - 1],
            "mcev": mcev(spectra, n, widths[n - 1]),
            "orthonormality_error": orthonormality_error(basis.w),
            "loss_ratio_to_pca": mean_reconstruction_loss(basis.w, feats[n], basis.mean)
            / max(mean_reconstruction_loss(oracle, feats[n], basis.mean), 1e-300),
        })
    kd = BlockwiseDistiller(teacher, bases, widths, seed=seed, prose_target=dc.prose_target)
    for n in range(1, 5):
        _, _, traces[f"pair{n}"] = kd.train_block_pair(x, n, steps=dc.pair_steps, lr=dc.lr,
                                                       batch_size=dc.batch_size)
    result = DistillResult(teacher, kd.student, tuple(widths), report, traces)
    if out is not None:
        write_distill(result, out)
    return result


def write_distill(res: DistillResult, d):
    d = Path(d)
    d.mkdir(parents=True, exist_ok=True)
    blobs = {f"teacher/{k}": v for k, v in res.teacher.state_dict().items()}
    blobs.update({f"student/{k}": v for k, v in res.student.state_dict().items()})
    blobs["meta/student_widths"] = np.array(res.widths, dtype=np.float64)
    save_checkpoint(blobs, d / "distill.ckp")
    with open(d / "channels.csv", "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=list(res.report[0]))
        wr.writeheader()
        for row in res.report:
            wr.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    for name, trace in res.traces.items():
        write_loss_csv(trace, d / f"{name}_loss.csv")
    params_t = res.teacher.encoder_param_count() + res.teacher.decoder_param_count()
    params_s = res.student.encoder_param_count() + res.student.decoder_param_count()
    (d / "compression.txt").write_text(
        f"teacher_params {params_t}\nstudent_params {params_s}\nratio {params_t / params_s!r}\n")


def read_distill(d):
    path = Path(d) / "distill.ckp"
    if not path.exists():
        raise MissingInput(f"{path} not found; run `distill` first")
    blobs = load_checkpoint(path)
    widths = tuple(int(c) for c in blobs["meta/student_widths"])
    in_ch = blobs["teacher/enc.0.steps.0.w"].shape[1]
    teacher = Coder(VGG_WIDTHS, in_ch, stream(0, "coder/skeleton"))
    teacher.load_state_dict({k[8:]: v for k, v in blobs.items() if k.startswith("teacher/")})
    student = Coder(widths, in_ch, stream(0, "coder/skeleton"))
    student.load_state_dict({k[8:]: v for k, v in blobs.items() if k.startswith("student/")})
    teacher.freeze()
    student.freeze()
    return teacher, student


def extractor_kind(cfg: RunConfig):
    m = cfg.modules
    return "vgg" if m.vgg else "kd" if m.kd_vgg else "raw"


# ---------------------------------------------------------------- training / estimation

def train_config(cfg: RunConfig, seed=None, steps=None):
    d = cfg.diffusion
    return TrainConfig(T=d.T, beta_start=d.beta_start, beta_end=d.beta_end, widths=int_list(d.widths),
                       fusion="attention" if cfg.modules.attention_mlp else "concat",
                       steps=d.steps if steps is None else steps, lr=d.lr, batch_size=d.batch_size,
                       masked_loss=cfg.modules.mask, seed=cfg.run.seed if seed is None else seed)


def train_stage(cfg: RunConfig, train_scenes, coders=None, seed=None, steps=None, out=None):
    """Train the denoiser; returns the checkpoint blobs (model + extractor)."""
    kind = extractor_kind(cfg)
    coder = None
    if kind != "raw":
        if coders is None:
            raise MissingInput(f"extractor {kind!r} needs distillation artifacts; run `distill` first")
        coder = coders[0] if kind == "vgg" else coders[1]
    ims, dens, masks = augmented(train_scenes)
    ex = make_extractor(kind, ims, coder)
    cond = ex(ims)
    samples = [Sample(c, d, m) for c, d, m in zip(cond, dens, masks)]
    loss_csv = None if out is None else Path(out) / "loss.csv"
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
    model, losses = train_iidm(samples, train_config(cfg, seed, steps), loss_csv)
    blobs = model.to_blobs()
    blobs.update(ex.to_blobs())
    h, w = dens[0].shape
    blobs["meta/shape"] = np.array([h, w], dtype=np.float64)
    blobs["meta/mask"] = np.array([1.0 if cfg.modules.mask else 0.0])
    blobs = {k: np.asarray(v, dtype=np.float32) for k, v in blobs.items()}
    if out is not None:
        save_checkpoint(blobs, Path(out) / "iidm.ckp")
    return blobs, losses


def estimate(imagery: Raster, mask, checkpoint, seed, n_samples=8):
    """Density raster (Mg/pixel) for ``imagery`` from a trained checkpoint.

    ``checkpoint`` is a path or a blob dict. ``mask`` may be None, in which
    case the output is not masked.
    """
    blobs = load_checkpoint(checkpoint) if isinstance(checkpoint, (str, os.PathLike)) else checkpoint
    shape = tuple(int(v) for v in blobs["meta/shape"])
    if (imagery.height, imagery.width) != shape:
        raise ValueError(f"imagery is {imagery.height}x{imagery.width}, checkpoint expects {shape[0]}x{shape[1]}")
    ex = Extractor.from_blobs(blobs)
    if imagery.channels != ex.band_mean.size:
        raise ValueError(f"imagery has {imagery.channels} bands, checkpoint expects {ex.band_mean.size}")
    model = IidmModel.from_blobs(blobs)
    cond = ex([imagery.data.astype(np.float64)])[0]
    m = None if mask is None else forest(mask)
    d = sample_density(model, cond, m, seed=seed, n_samples=n_samples)
    return Raster(d.astype(np.float32))


def estimate_seed(cfg: RunConfig):
    return derive_seed(cfg.run.seed, "estimate")


def write_report_csv(rows, path):
    """rows: iterable of (run_id, MetricReport)."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(CSV_COLUMNS)
        for run_id, rep in rows:
            wr.writerow(rep.csv_row(run_id))


def evaluate_run(pred, truth, mask=None, csv_path=None, run_id="run"):
    rep = evaluate(pred, truth, mask)
    if csv_path is not None:
        path = Path(csv_path)
        new = not path.exists()
        with open(path, "a", newline="") as fh:
            wr = csv.writer(fh)
            if new:
                wr.writerow(CSV_COLUMNS)
            wr.writerow(rep.csv_row(run_id))
    return rep


def baseline_stage(cfg: RunConfig, scenes, out=None):
    """OLS fit on training scenes, evaluated on the held-out one."""
    train, test = split(scenes)
    use_mask = cfg.modules.mask
    masks = [forest(s.mask) for s in train] if use_mask else None
    coef = fit_scenes([s.imagery.data for s in train], [s.truth_density.band for s in train], masks)
    pred = predict_scene(coef, test.imagery.data, forest(test.mask) if use_mask else None)
    pred_r = Raster(pred.astype(np.float32))
    rep = evaluate(pred_r, test.truth_density, test.mask if use_mask else None)
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        write_raster(pred_r, out / "ols_pred.ras")
        with open(out / "coef.csv", "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["term", "coef"])
            for i, c in enumerate(coef[:-1]):
                wr.writerow([f"band{i + 1}", repr(float(c))])
            wr.writerow(["intercept", repr(float(coef[-1]))])
        write_report_csv([("ols", rep)], out / "metrics.csv")
    return rep, coef, pred_r


# ---------------------------------------------------------------- end to end

def run_pipeline(cfg: RunConfig, out):
    """gen -> distill (if needed) -> train -> estimate -> eval, plus the OLS baseline."""
    out = Path(out)
    scenes = gen_stage(cfg, out)
    train, test = split(scenes)
    coders = None
    if extractor_kind(cfg) != "raw":
        distill_stage(cfg, train, out / "distill")
        coders = read_distill(out / "distill")
    blobs, _ = train_stage(cfg, train, coders, out=out / "train")
    pred = estimate(test.imagery, test.mask if cfg.modules.mask else None, blobs,
                    estimate_seed(cfg), cfg.diffusion.n_samples)
    (out / "estimate").mkdir(exist_ok=True)
    write_raster(pred, out / "estimate" / "pred.ras")
    mask = test.mask if cfg.modules.mask else None
    iidm = evaluate(pred, test.truth_density, mask)
    ols, _, _ = baseline_stage(cfg, scenes, out / "baseline")
    write_report_csv([("iidm", iidm), ("ols", ols)], out / "metrics.csv")
    return {"iidm": iidm, "ols": ols}


# ---------------------------------------------------------------- ablation

def ablation_row(cfg: RunConfig, no: int, out) -> list:
    """Train and evaluate one toggle combination; failures become a 'failed' row."""
    mask, vgg, kd, att = ABLATION_GRID[no - 1]
    head = [no, int(mask), int(vgg), int(kd), int(att)]
    try:
        row_cfg = cfg.with_modules(mask=mask, vgg=vgg, kd_vgg=kd, attention_mlp=att)
        scenes = load_scenes(out)
        train, test = split(scenes)
        coders = read_distill(Path(out) / "ablation" / "distill") if (vgg or kd) else None
        seed = derive_seed(cfg.run.seed, f"ablation/{no}")
        blobs, _ = train_stage(row_cfg, train, coders, seed=seed, steps=cfg.ablation.steps)
        m = test.mask if mask else None
        pred = estimate(test.imagery, m, blobs, derive_seed(seed, "estimate"), cfg.diffusion.n_samples)
        rep = evaluate(pred, test.truth_density, m)
        row_dir = Path(out) / "ablation" / f"row_{no:02d}"
        row_dir.mkdir(parents=True, exist_ok=True)
        write_raster(pred, row_dir / "pred.ras")
        return head + ["ok", repr(rep.mae), repr(rep.rmse), repr(rep.ssim),
                       "inf" if rep.psnr == float("inf") else repr(rep.psnr), str(rep.n_pixels)]
    except Exception as exc:  # noqa: BLE001 - the harness records and continues
        log.error("ablation row %d failed: %s", no, exc)
        return head + [f"failed: {type(exc).__name__}: {exc}", "", "", "", "", ""]


def worker_count():
    try:
        return max(1, int(os.environ.get("IIDM_THREADS", "1")))
    except ValueError:
        return 1


def run_ablation(cfg: RunConfig, out, rows=None, distill_dir=None):
    """All (or the selected) ablation rows against scenes under ``out``; writes ablation.csv.

    ``distill_dir`` points at an existing distillation made with the same
    config and scenes (e.g. OUT/distill from ``run_pipeline``); it is copied
    instead of distilling again.
    """
    out = Path(out)
    rows = list(range(1, 13)) if rows is None else list(rows)
    scenes = load_scenes(out)
    train, _ = split(scenes)
    dist_dir = out / "ablation" / "distill"
    dist_dir.mkdir(parents=True, exist_ok=True)
    if any(ABLATION_GRID[n - 1][1] or ABLATION_GRID[n - 1][2] for n in rows):
        if distill_dir is not None:
            shutil.copytree(distill_dir, dist_dir, dirs_exist_ok=True)
        else:
            distill_stage(cfg, train, dist_dir)
    workers = min(worker_count(), len(rows))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            table = list(pool.map(ablation_row, [cfg] * len(rows), rows, [out] * len(rows)))
    else:
        table = [ablation_row(cfg, n, out) for n in rows]
    with open(out / "ablation" / "ablation.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(ABLATION_COLUMNS)
        wr.writerows(table)
    return table
