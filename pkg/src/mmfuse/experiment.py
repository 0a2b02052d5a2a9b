"""Reproducible fold x seed experiment runs over one model configuration.

A run trains the configured structure once per (fold, seed) pair of a
stratified k-fold split, evaluates the held-out fold, and emits rows
``method, run, bac, acc, auc`` (a joint-individual structure in "all"
report mode yields both its fusion-branch and decision-fused variants from
the same trained model). Every random draw derives from the config, so a
rerun writes byte-identical results.
"""

import concurrent.futures
import hashlib
import json
import os
import platform
from dataclasses import dataclass, field, replace

import numpy as np
import scipy

from . import autodiff as ad
from .autodiff import Tensor, grad_check
from .data import SyntheticSpec, generate_synthetic, load_dataset
from .encoders import ImageEncoder, MetadataEncoder
from .errors import ConfigError, NumericError
from .evaluation import confusion, metric_report, stratified_kfold
from .fusion import ConcatFusion, MMFAFusion, fuse_concat, mmfa_fuse
from .structures import (
    ModelAssembly,
    combine_losses,
    make_head,
    weighted_ce,
)
from .training import (
    TrainConfig,
    predict_probs,
    save_checkpoint,
    train,
)

FUSIONS = ("cat", "mmfa")
REPORTS = ("ofb", "all")


@dataclass(frozen=True)
class ModelConfig:
    structure: str = "jif"
    fusion: str = "mmfa"
    report: str = "all"
    heads: int = 8
    scale_after_softmax: bool = False
    image_features: int = 128
    metadata_features: int = 64
    channels: tuple = (8, 16, 32)
    metadata_hidden: tuple = (64,)

    def validate(self):
        if self.structure not in ("image", "jf", "jif"):
            raise ConfigError(f"unknown structure {self.structure!r}")
        if self.fusion not in FUSIONS:
            raise ConfigError(f"unknown fusion {self.fusion!r}")
        if self.report not in REPORTS:
            raise ConfigError(f"unknown report mode {self.report!r}")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in cls.__dataclass_fields__.values()}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        d = dict(d)
        for key in ("channels", "metadata_hidden"):
            if key in d:
                d[key] = tuple(d[key])
        cfg = cls(**d)
        cfg.validate()
        return cfg


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: dict = field(default_factory=dict)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    folds: int = 5
    seeds: tuple = (0,)
    split_seed: int = 0
    out: str = None
    save_checkpoints: bool = True
    jobs: int = 1

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = {f.name for f in cls.__dataclass_fields__.values()}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown experiment config keys: {sorted(unknown)}")
        if "model" in d:
            d["model"] = ModelConfig.from_dict(d["model"])
        if "train" in d:
            d["train"] = TrainConfig.from_dict(d["train"])
        if "seeds" in d:
            d["seeds"] = tuple(d["seeds"])
        cfg = cls(**d)
        cfg.model.validate()
        cfg.train.validate()
        if cfg.folds < 2:
            raise ConfigError("need at least 2 folds")
        if not cfg.seeds:
            raise ConfigError("need at least one seed")
        if not cfg.dataset:
            raise ConfigError("config must name a dataset source")
        return cfg

    @classmethod
    def from_json_file(cls, path, overrides=()):
        with open(path) as fh:
            raw = json.load(fh)
        for key, value in overrides:
            _set_path(raw, key, value)
        return cls.from_dict(raw)


def _set_path(raw, dotted, value):
    """Apply a --set key.path=value override onto the raw config dict."""
    parts = dotted.split(".")
    node = raw
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    try:
        node[parts[-1]] = json.loads(value)
    except json.JSONDecodeError:
        node[parts[-1]] = value


def resolve_dataset(dataset_cfg):
    if "synthetic" in dataset_cfg:
        return generate_synthetic(SyntheticSpec.from_dict(dataset_cfg["synthetic"]))
    if "dir" in dataset_cfg:
        size = dataset_cfg.get("resize")
        return load_dataset(dataset_cfg["dir"], size=None if size is None else tuple(size))
    raise ConfigError("dataset config needs a 'synthetic' spec or a 'dir' path")


def build_assembly(model_cfg, dataset, rng):
    """Construct the configured structure; shared components draw rng first."""
    n_classes = dataset.n_classes
    image_encoder = ImageEncoder(
        in_shape=dataset.images.shape[1:],
        channels=model_cfg.channels,
        out_dim=model_cfg.image_features,
        rng=rng,
    )
    if model_cfg.structure == "image":
        head_i = make_head(model_cfg.image_features, n_classes, rng)
        return ModelAssembly(
            "image", n_classes, image_encoder, head_i=head_i
        )
    metadata_encoder = MetadataEncoder(
        in_width=dataset.meta.shape[1],
        out_dim=model_cfg.metadata_features,
        hidden=model_cfg.metadata_hidden,
        rng=rng,
    )
    if model_cfg.fusion == "mmfa":
        fusion = MMFAFusion(
            model_cfg.image_features,
            model_cfg.metadata_features,
            rng=rng,
            heads=model_cfg.heads,
            scale_after_softmax=model_cfg.scale_after_softmax,
        )
    else:
        fusion = ConcatFusion(model_cfg.image_features, model_cfg.metadata_features)
    head_im = make_head(fusion.out_width, n_classes, rng)
    if model_cfg.structure == "jf":
        return ModelAssembly(
            "jf", n_classes, image_encoder, metadata_encoder, fusion, head_im=head_im
        )
    head_i = make_head(model_cfg.image_features, n_classes, rng)
    head_m = make_head(model_cfg.metadata_features, n_classes, rng)
    return ModelAssembly(
        "jif",
        n_classes,
        image_encoder,
        metadata_encoder,
        fusion,
        head_im=head_im,
        head_i=head_i,
        head_m=head_m,
    )


def method_base(model_cfg):
    if model_cfg.structure == "image":
        return "Image"
    return f"{model_cfg.structure.upper()}-{model_cfg.fusion.upper()}"


def method_variants(model_cfg):
    """(method name, probability key) pairs the structure reports."""
    base = method_base(model_cfg)
    if model_cfg.structure == "image":
        return [(base, "i")]
    if model_cfg.structure == "jf":
        return [(base, "im")]
    variants = [(f"{base}-OFB", "im")]
    if model_cfg.report == "all":
        variants.append((f"{base}-ALL", "fused"))
    return variants


@dataclass
class RunOutcome:
    run: str
    rows: list
    failed: bool = False
    error: str = ""


@dataclass
class ExperimentResult:
    rows: list
    failures: list

    def ok(self):
        return not self.failures


def _derived_seed(*parts):
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _run_single(cfg, dataset, folds, seed, fold_idx):
    run_id = f"f{fold_idx}-s{seed}"
    k = len(folds)
    test_idx = folds[fold_idx]
    val_idx = folds[(fold_idx + 1) % k]
    train_idx = np.sort(
        np.concatenate(
            [folds[j] for j in range(k) if j != fold_idx and j != (fold_idx + 1) % k]
        )
    )
    rng = np.random.default_rng([cfg.split_seed, seed, fold_idx])
    assembly = build_assembly(cfg.model, dataset, rng)
    train_cfg = replace(cfg.train, seed=_derived_seed(cfg.train.seed, seed, fold_idx))
    try:
        assembly, log = train(
            assembly,
            dataset.subset(train_idx),
            dataset.subset(val_idx),
            train_cfg,
            report=cfg.model.report,
        )
    except NumericError as e:
        return RunOutcome(run=run_id, rows=[], failed=True, error=str(e))

    test_set = dataset.subset(test_idx)
    probs = predict_probs(assembly, test_set)
    rows = []
    reports = {}
    for method, key in method_variants(cfg.model):
        scores = probs[key]
        cm = confusion(test_set.labels, scores.argmax(axis=1), dataset.n_classes)
        rep = metric_report(cm, scores, test_set.labels)
        rows.append(
            {
                "method": method,
                "run": run_id,
                "bac": rep["bac"],
                "acc": rep["acc"],
                "auc": rep["auc"],
            }
        )
        reports[method] = (cm, rep)

    if cfg.out is not None:
        run_dir = os.path.join(cfg.out, method_base(cfg.model), run_id)
        os.makedirs(run_dir, exist_ok=True)
        log.write_csv(os.path.join(run_dir, "trainlog.csv"))
        if cfg.save_checkpoints:
            save_checkpoint(
                assembly,
                os.path.join(run_dir, "checkpoint.bin"),
                os.path.join(run_dir, "checkpoint.json"),
            )
        for method, (cm, rep) in reports.items():
            with open(os.path.join(run_dir, f"metrics_{method}.json"), "w") as fh:
                json.dump(rep, fh, indent=2)
            _write_confusion(
                os.path.join(run_dir, f"confusion_{method}.csv"),
                cm,
                dataset.schema.classes,
            )
    return RunOutcome(run=run_id, rows=rows)


def _write_confusion(path, cm, classes):
    with open(path, "w") as fh:
        fh.write("true\\pred," + ",".join(classes) + "\n")
        for i, row in enumerate(cm):
            fh.write(classes[i] + "," + ",".join(str(int(v)) for v in row) + "\n")


def run_experiment(cfg):
    """Train and evaluate the full fold x seed grid; write artifacts under out."""
    if cfg.folds < 3:
        raise ConfigError(
            "experiment runs need k >= 3 folds (held-out test, validation, training)"
        )
    dataset = resolve_dataset(cfg.dataset)
    folds = stratified_kfold(dataset.labels, cfg.folds, cfg.split_seed)
    tasks = [(seed, fold) for seed in cfg.seeds for fold in range(cfg.folds)]
    if cfg.out is not None:
        os.makedirs(cfg.out, exist_ok=True)

    if cfg.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            outcomes = list(
                pool.map(
                    _run_single,
                    *zip(*[(cfg, dataset, folds, s, f) for s, f in tasks]),
                )
            )
    else:
        outcomes = [_run_single(cfg, dataset, folds, s, f) for s, f in tasks]

    rows, failures = [], []
    for outcome in outcomes:
        rows.extend(outcome.rows)
        if outcome.failed:
            failures.append({"run": outcome.run, "error": outcome.error})

    if cfg.out is not None:
        _write_results_csv(os.path.join(cfg.out, "results.csv"), rows)
        _write_manifest(cfg, failures)
    return ExperimentResult(rows=rows, failures=failures)


def _write_results_csv(path, rows):
    with open(path, "w", newline="") as fh:
        fh.write("method,run,bac,acc,auc\n")
        for r in rows:
            fh.write(
                f"{r['method']},{r['run']},{r['bac']:.12g},{r['acc']:.12g},"
                f"{r['auc']:.12g}\n"
            )


def config_digest(cfg):
    blob = json.dumps(_cfg_to_dict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def _cfg_to_dict(cfg):
    return {
        "dataset": cfg.dataset,
        "model": vars(cfg.model) | {
            "channels": list(cfg.model.channels),
            "metadata_hidden": list(cfg.model.metadata_hidden),
        },
        "train": vars(cfg.train),
        "folds": cfg.folds,
        "seeds": list(cfg.seeds),
        "split_seed": cfg.split_seed,
        "save_checkpoints": cfg.save_checkpoints,
    }


def _write_manifest(cfg, failures):
    manifest = {
        "config": _cfg_to_dict(cfg),
        "config_sha256": config_digest(cfg),
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "failures": failures,
    }
    with open(os.path.join(cfg.out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# finite-difference verification of every differentiable block


@dataclass
class BlockReport:
    name: str
    max_rel_error: float
    passed: bool


def _check_targets(name, targets, loss_fn, step, tol):
    worst = 0.0
    for _, tensor in targets:
        rep = grad_check(lambda _t: loss_fn(), tensor, step=step, tol=tol)
        worst = max(worst, rep.max_rel_error)
    return BlockReport(name=name, max_rel_error=worst, passed=worst < tol)


def _sumsq(t):
    return ad.mul(t, t).sum()


def gradcheck_suite(step=1e-5, tol=1e-4):
    """Finite-difference checks over every differentiable block at toy sizes."""
    reports = []

    rng = np.random.default_rng(11)
    enc = MetadataEncoder(in_width=7, out_dim=5, hidden=(6,), rng=rng)
    x = Tensor(rng.normal(size=(3, 7)), requires_grad=True, name="meta_in")
    targets = [("meta_in", x)] + enc.params()
    reports.append(
        _check_targets(
            "metadata_encoder", targets, lambda: _sumsq(enc(x, "train")), step, tol
        )
    )

    rng = np.random.default_rng(12)
    ienc = ImageEncoder(in_shape=(3, 8, 8), channels=(2, 3, 4), out_dim=5, rng=rng)
    xi = Tensor(rng.normal(size=(2, 3, 8, 8)), requires_grad=True, name="img_in")
    targets = [("img_in", xi)] + ienc.params()
    reports.append(
        _check_targets(
            "image_encoder", targets, lambda: _sumsq(ienc(xi, "train")), step, tol
        )
    )

    rng = np.random.default_rng(13)
    fi = Tensor(rng.normal(size=(3, 4)), requires_grad=True, name="f_img")
    fm = Tensor(rng.normal(size=(3, 2)), requires_grad=True, name="f_meta")
    reports.append(
        _check_targets(
            "concat_fusion",
            [("f_img", fi), ("f_meta", fm)],
            lambda: _sumsq(fuse_concat(fi, fm)),
            step,
            tol,
        )
    )

    for label, post in (("mmfa", False), ("mmfa_post_softmax_scale", True)):
        rng = np.random.default_rng(14)
        mmfa = MMFAFusion(6, 3, rng=rng, heads=3, scale_after_softmax=post)
        fi = Tensor(rng.normal(size=(4, 6)), requires_grad=True, name="f_img")
        fm = Tensor(rng.normal(size=(4, 3)), requires_grad=True, name="f_meta")
        targets = [("f_img", fi), ("f_meta", fm)] + mmfa.params()
        # qkv biases feed a batch norm, so their true gradient is exactly
        # zero; a small probe keeps fp noise below the rel-error floor
        reports.append(
            _check_targets(
                label,
                targets,
                lambda m=mmfa, a=fi, b=fm: ad.scale(
                    _sumsq(mmfa_fuse(a, b, m, "train")), 1e-4
                ),
                step,
                tol,
            )
        )

    rng = np.random.default_rng(15)
    labels = rng.integers(0, 3, size=6)
    weights = np.array([1.5, 0.75, 1.0])
    for label, width in (("head_fused", 9), ("head_image", 6), ("head_meta", 3)):
        head = make_head(width, 3, rng)
        feats = Tensor(rng.normal(size=(6, width)), requires_grad=True, name="feats")
        targets = [("feats", feats)] + head.params()
        reports.append(
            _check_targets(
                label,
                targets,
                lambda h=head, f=feats: weighted_ce(h(f), labels, weights),
                step,
                tol,
            )
        )

    rng = np.random.default_rng(16)
    for beta in (0.0, 0.5, 1.0):
        zs = [
            Tensor(rng.normal(size=(4, 3)), requires_grad=True, name=f"logits{j}")
            for j in range(3)
        ]
        lbl = rng.integers(0, 3, size=4)

        def loss_fn(zs=zs, lbl=lbl, beta=beta):
            l_i = weighted_ce(zs[0], lbl, weights)
            l_m = weighted_ce(zs[1], lbl, weights)
            l_im = weighted_ce(zs[2], lbl, weights)
            return combine_losses(l_i, l_m, l_im, beta)

        targets = [(f"logits{j}", z) for j, z in enumerate(zs)]
        reports.append(
            _check_targets(f"total_loss_beta_{beta:g}", targets, loss_fn, step, tol)
        )

    return reports
