"""Command-line surface: one subcommand per pipeline stage.

Every run resolves an effective config (file + flag overrides), writes
its outputs atomically, and drops a manifest (config snapshot, tool
version, argv, input/output hashes) beside the primary output so the run
can be replayed byte-for-byte.

Exit codes: 1 usage, 2 invalid input, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .articulate import fit_pose_pair, read_part_index, reassemble
from .config import RunConfig, config_from_dict, load_config
from .denoise import (
    DenoiserBundle,
    AnalyticGaussianDenoiser,
    LatentDims,
    SyncCoefficients,
    edit_part,
    make_schedule,
    sample,
    scene_refine,
)
from .errors import ConfigError, FormatError, InputError, NumericError, PartlatError
from .metrics import metric_report, read_point_cloud
from .parallel import pmap
from .parts import IdentityTable, read_pltf, write_pltf
from .relations import (
    CorpusObject,
    ValidationThresholds,
    canonicalize,
    compute_aabb,
    dataset_stats,
    ood_splits,
    read_triplets,
    validate_triplet,
    write_triplets,
    VOCABULARY,
    RelationalTriplet,
)
from .semantics import Embedder, SemanticLatents, encode_global, encode_local


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit(2); usage is exit 1 here
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


# ---------------------------------------------------------------------------
# small IO helpers
# ---------------------------------------------------------------------------


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _atomic_write_text(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic(path, writer) -> None:
    """Run ``writer(tmp_path)`` then rename tmp into place."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name, suffix=".tmp")
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_lines(path) -> list[str]:
    with open(path, "r", encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip()]


def _read_parts_table(path) -> dict[int, str]:
    table = {}
    for lineno, line in enumerate(_read_lines(path), start=1):
        fields = line.split("\t") if "\t" in line else line.split(None, 1)
        if len(fields) != 2:
            raise InputError(f"{path}:{lineno}: expected 'part_id<TAB>label'")
        try:
            pid = int(fields[0])
        except ValueError as exc:
            raise InputError(f"{path}:{lineno}: part id must be an integer") from exc
        table[pid] = fields[1].strip()
    if not table:
        raise InputError(f"{path}: empty part table")
    return table


def _read_geometry_table(path) -> dict[str, dict[int, np.ndarray]]:
    """TSV rows: object_id, part_id, x, y, z (one point per line)."""
    rows: dict[str, dict[int, list]] = {}
    for lineno, line in enumerate(_read_lines(path), start=1):
        fields = line.split()
        if len(fields) != 5:
            raise InputError(f"{path}:{lineno}: expected 'object_id part_id x y z'")
        try:
            pid = int(fields[1])
            xyz = [float(v) for v in fields[2:]]
        except ValueError as exc:
            raise InputError(f"{path}:{lineno}: malformed row") from exc
        rows.setdefault(fields[0], {}).setdefault(pid, []).append(xyz)
    return {
        oid: {pid: np.asarray(pts, dtype=np.float64) for pid, pts in parts.items()}
        for oid, parts in rows.items()
    }


def _read_corpus(path) -> list[CorpusObject]:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON ({exc.msg})") from exc
    if not isinstance(raw, list):
        raise FormatError(f"{path}: corpus must be a JSON list of objects")
    corpus = []
    for k, entry in enumerate(raw):
        if not isinstance(entry, dict) or "object_id" not in entry:
            raise FormatError(f"{path}: entry {k} must be an object with an 'object_id'")
        parts = {int(pid): str(lbl) for pid, lbl in dict(entry.get("parts", {})).items()}
        triplets = []
        for t in entry.get("triplets", []):
            i, j, name = int(t[0]), int(t[1]), str(t[2])
            if name not in VOCABULARY:
                raise FormatError(f"{path}: entry {k}: unknown predicate {name!r}")
            triplets.append(RelationalTriplet(i, j, VOCABULARY[name], provenance="external-file"))
        corpus.append(
            CorpusObject(
                object_id=str(entry["object_id"]),
                category=str(entry.get("category", "")),
                parts=parts,
                triplets=triplets,
            )
        )
    return corpus


def _make_embedder(cfg: RunConfig) -> Embedder:
    if cfg.embedder == "hash":
        return Embedder.hashed(d_text=cfg.d_text, d_out=cfg.d, seed=cfg.seed)
    path = cfg.embedder.split(":", 1)[1]
    if not os.path.exists(path):
        raise ConfigError(f"embedder file {path!r} does not exist")
    return Embedder.from_file(path, d_out=cfg.d)


def _make_sync(cfg: RunConfig) -> SyncCoefficients:
    scalars = dict(
        alpha_3d=cfg.alpha_3d,
        alpha_2d=cfg.alpha_2d,
        lambda_3d=cfg.lambda_3d,
        lambda_2d=cfg.lambda_2d,
        beta_3d=cfg.beta_3d,
        beta_2d=cfg.beta_2d,
        eta=cfg.eta,
    )
    if cfg.sync_init == "identity":
        return SyncCoefficients.identity(cfg.d, **scalars)
    if cfg.sync_init == "disabled":
        return SyncCoefficients.disabled(cfg.d)
    return SyncCoefficients.seeded(cfg.d, cfg.sync_seed, **scalars)


def _load_semantics(cfg: RunConfig, emb: Embedder, triplet_path, phrase_path, part_names) -> SemanticLatents:
    triplets = []
    if triplet_path:
        triplets = [t for _, t in read_triplets(triplet_path)]
    phrases = _read_lines(phrase_path) if phrase_path else []
    return SemanticLatents(
        encode_global(triplets, part_names, emb),
        encode_local(phrases, k_m=cfg.k_m, emb=emb),
    )


def _write_manifest(out_path, command, argv, cfg: RunConfig, inputs, outputs) -> str:
    manifest = {
        "tool": "partlat",
        "version": __version__,
        "command": command,
        "argv": list(argv),
        "config": cfg.to_dict(),
        "inputs": {str(p): _sha256(p) for p in inputs if p},
        "outputs": {str(p): _sha256(p) for p in outputs if p},
    }
    path = str(out_path) + ".manifest.json"
    _atomic_write_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _resolve_config(args, overrides: dict) -> RunConfig:
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        cfg = RunConfig()
    merged = cfg.to_dict()
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_dict(merged, source="<effective config>")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_canonicalize(args, argv) -> int:
    cfg = _resolve_config(args, {"embedder": args.embedder, "seed": args.seed})
    inputs = [args.captions, args.parts] + ([args.config] if args.config else [])
    if args.manifest_only:
        _write_manifest(args.out, "canonicalize", argv, cfg, inputs, [])
        return 0
    emb = _make_embedder(cfg)
    vocab = _read_parts_table(args.parts)
    captions = _read_lines(args.captions)
    triplets = canonicalize(captions, vocab, emb)
    records = [(args.object_id, t) for t in triplets]
    _atomic(args.out, lambda tmp: write_triplets(tmp, records))
    _write_manifest(args.out, "canonicalize", argv, cfg, inputs, [args.out])
    print(f"canonicalize: {len(captions)} captions -> {len(triplets)} triplets -> {args.out}")
    return 0


def _cmd_validate(args, argv) -> int:
    cfg = _resolve_config(
        args,
        {
            "eps_rel": args.eps_rel,
            "tau_gap": args.tau_gap,
            "theta_in": args.theta_in,
            "theta_sym": args.theta_sym,
        },
    )
    inputs = [args.triplets, args.geometry] + ([args.config] if args.config else [])
    if args.manifest_only:
        _write_manifest(args.out, "validate", argv, cfg, inputs, [])
        return 0
    th = ValidationThresholds(cfg.eps_rel, cfg.tau_gap, cfg.theta_in, cfg.theta_sym)
    records = read_triplets(args.triplets)
    geometry = _read_geometry_table(args.geometry)
    boxes_by_object = {
        oid: dict(zip(parts.keys(), pmap(compute_aabb, parts.values())))
        for oid, parts in geometry.items()
    }
    lines = []
    counts = {"valid": 0, "violated": 0, "unchecked": 0}
    for oid, t in records:
        if t.predicate.kind == "spatial" and oid not in boxes_by_object:
            raise InputError(f"no geometry for object {oid!r}")
        res = validate_triplet(t, boxes_by_object.get(oid, {}), th)
        counts[res.status] += 1
        lines.append(f"{oid}\t{t.i}\t{t.j}\t{t.predicate.name}\t{res.status}\t{res.reason}")
    _atomic_write_text(args.out, "\n".join(lines) + ("\n" if lines else ""))
    outputs = [args.out]
    if args.figures:
        from .report import render_validation_summary

        fig_path = str(Path(args.out).with_suffix(".png"))
        render_validation_summary(counts, fig_path)
        outputs.append(fig_path)
    _write_manifest(args.out, "validate", argv, cfg, inputs, outputs)
    print(
        f"validate: {counts['valid']} valid, {counts['violated']} violated, "
        f"{counts['unchecked']} unchecked -> {args.out}"
    )
    return 0


def _sample_ingredients(args, cfg: RunConfig, n_parts: int):
    emb = _make_embedder(cfg)
    if getattr(args, "part_labels", None):
        names = _read_parts_table(args.part_labels)
    else:
        names = {i: f"part{i}" for i in range(n_parts)}
    semantics = _load_semantics(cfg, emb, getattr(args, "triplets", None), getattr(args, "phrases", None), names)
    sched = make_schedule(cfg.steps, cfg.schedule_kind)
    coeffs = _make_sync(cfg)
    denoisers = DenoiserBundle.analytic(mu=args.target_mu, s=args.target_std)
    table = IdentityTable(cfg.d, seed=cfg.identity_seed)
    return names, semantics, sched, coeffs, denoisers, table


def _cmd_sample(args, argv) -> int:
    cfg = _resolve_config(
        args,
        {"steps": args.steps, "seed": args.seed, "schedule_kind": args.schedule,
         "k_m": args.k_m, "embedder": args.embedder},
    )
    inputs = [p for p in (args.triplets, args.phrases, args.part_labels, args.config) if p]
    if args.manifest_only:
        _write_manifest(args.out, "sample", argv, cfg, inputs, [])
        return 0
    names, semantics, sched, coeffs, denoisers, table = _sample_ingredients(args, cfg, args.parts)
    obj = sample(
        args.parts,
        LatentDims(cfg.d, cfg.t3d, cfg.t2d),
        semantics,
        sched,
        denoisers,
        seed=cfg.seed,
        coeffs=coeffs,
        identity_table=table,
        labels=names,
        planner_reset=cfg.planner_reset,
    )
    _atomic(args.out, lambda tmp: write_pltf(tmp, obj))
    _write_manifest(args.out, "sample", argv, cfg, inputs, [args.out])
    print(f"sample: {args.parts} parts x {cfg.steps} steps (seed {cfg.seed}) -> {args.out}")
    return 0


def _cmd_edit(args, argv) -> int:
    cfg = _resolve_config(args, {"seed": args.seed, "steps": args.steps, "k_sync": args.k_sync,
                                 "embedder": args.embedder})
    inputs = [p for p in (args.infile, args.phrases, args.orig_phrases, args.triplets, args.config) if p]
    if args.manifest_only:
        _write_manifest(args.out, "edit", argv, cfg, inputs, [])
        return 0
    obj = read_pltf(args.infile)
    if obj.d != cfg.d:
        raise InputError(f"object width d={obj.d} does not match config d={cfg.d}")
    emb = _make_embedder(cfg)
    names = {p.part_id: (p.label or f"part{p.part_id}") for p in obj.parts}
    orig_phrases = _read_lines(args.orig_phrases) if args.orig_phrases else _read_lines(args.phrases)
    triplets = [t for _, t in read_triplets(args.triplets)] if args.triplets else []
    semantics = SemanticLatents(
        encode_global(triplets, names, emb),
        encode_local(orig_phrases, k_m=cfg.k_m, emb=emb),
    )
    new_local = encode_local(_read_lines(args.phrases), k_m=cfg.k_m, emb=emb)
    sched = make_schedule(cfg.steps, cfg.schedule_kind)
    if not (0 <= args.tau <= sched.T):
        raise InputError(f"--tau must lie in [0, {sched.T}], got {args.tau}")
    denoisers = DenoiserBundle.analytic(mu=args.target_mu, s=args.target_std)
    edited = edit_part(
        obj,
        args.target,
        new_local,
        args.tau,
        sched,
        denoisers,
        semantics,
        coeffs=_make_sync(cfg),
        k_sync=cfg.k_sync,
    )
    _atomic(args.out, lambda tmp: write_pltf(tmp, edited))
    _write_manifest(args.out, "edit", argv, cfg, inputs, [args.out])
    print(f"edit: part {args.target} at tau={args.tau}, k_sync={cfg.k_sync} -> {args.out}")
    return 0


def _cmd_scene(args, argv) -> int:
    cfg = _resolve_config(args, {"seed": args.seed, "k_refine": args.k_refine,
                                 "embedder": args.embedder})
    inputs = list(args.objects) + [p for p in (args.scene_triplets, args.config) if p]
    out_dir = Path(args.out_dir)
    out_paths = [out_dir / (Path(p).stem + ".scene.pltf") for p in args.objects]
    primary = out_paths[0]
    if args.manifest_only:
        _write_manifest(primary, "scene", argv, cfg, inputs, [])
        return 0
    objects = [read_pltf(p) for p in args.objects]
    emb = _make_embedder(cfg)
    triplets = [t for _, t in read_triplets(args.scene_triplets)] if args.scene_triplets else []
    refined = scene_refine(
        objects,
        triplets,
        emb,
        coeffs=_make_sync(cfg),
        k_refine=cfg.k_refine,
        identity_table=IdentityTable(cfg.d, seed=cfg.identity_seed),
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    for path, obj in zip(out_paths, refined):
        _atomic(path, lambda tmp, o=obj: write_pltf(tmp, o))
    _write_manifest(primary, "scene", argv, cfg, inputs, out_paths)
    print(f"scene: refined {len(refined)} objects (k_refine={cfg.k_refine}) -> {out_dir}")
    return 0


def _cmd_metrics(args, argv) -> int:
    cfg = _resolve_config(args, {"voxel_resolution": args.voxel_resolution, "fscore_tau": args.tau})
    inputs = [args.pred, args.gt] + ([args.config] if args.config else [])
    if args.manifest_only:
        _write_manifest(args.report, "metrics", argv, cfg, inputs, [])
        return 0
    pred = read_point_cloud(args.pred)
    gt = read_point_cloud(args.gt)
    report = metric_report(pred, gt, voxel_resolution=cfg.voxel_resolution, tau=cfg.fscore_tau)
    _atomic_write_text(args.report, json.dumps(report, indent=2, sort_keys=True) + "\n")
    outputs = [args.report]
    if args.figures:
        from .report import render_metric_report

        fig_path = str(Path(args.report).with_suffix(".png"))
        render_metric_report(report, fig_path)
        outputs.append(fig_path)
    _write_manifest(args.report, "metrics", argv, cfg, inputs, outputs)
    print(
        f"metrics: CD={report['chamfer']:.6g} EMD={report['emd']:.6g} ({report['emd_mode']}) "
        f"IoU={report['voxel_iou']:.4g} F={report['fscore']:.4g} -> {args.report}"
    )
    return 0


def _cmd_articulate(args, argv) -> int:
    cfg = _resolve_config(args, {})
    inputs = [args.pose_a, args.pose_b, args.parts] + ([args.config] if args.config else [])
    if args.manifest_only:
        _write_manifest(args.out, "articulate", argv, cfg, inputs, [])
        return 0
    if not (0.0 <= args.s <= 1.0):
        raise InputError(f"--s must lie in [0, 1], got {args.s}")
    pose_a = read_point_cloud(args.pose_a)
    pose_b = read_point_cloud(args.pose_b)
    part_ids = read_part_index(args.parts, pose_a.shape[0])
    fits = fit_pose_pair(pose_a, pose_b, part_ids)
    parts = {pid: pose_a[part_ids == pid] for pid in fits}
    moved = reassemble(parts, {pid: fit[0] for pid, fit in fits.items()}, s=args.s)
    _atomic(args.out, lambda tmp: write_point_cloud_like(tmp, args.out, moved))
    _write_manifest(args.out, "articulate", argv, cfg, inputs, [args.out])
    rms = max(fit[1] for fit in fits.values())
    print(f"articulate: {len(fits)} parts, worst residual RMS {rms:.3g}, s={args.s} -> {args.out}")
    return 0


def write_point_cloud_like(tmp_path, final_path, points) -> None:
    # the tmp file has a .tmp suffix; pick the format from the final name
    if str(final_path).endswith(".ply"):
        from .metrics import write_ply

        write_ply(tmp_path, points)
    else:
        from .metrics import write_xyz

        write_xyz(tmp_path, points)


def _cmd_stats(args, argv) -> int:
    cfg = _resolve_config(args, {"ood_min_count": args.min_count})
    inputs = [args.corpus] + [p for p in (args.triplets, args.config) if p]
    if args.manifest_only:
        _write_manifest(args.report, "stats", argv, cfg, inputs, [])
        return 0
    corpus = _read_corpus(args.corpus)
    if args.triplets:
        extra = read_triplets(args.triplets)
        by_id = {o.object_id: o for o in corpus}
        for oid, t in extra:
            if oid in by_id:
                by_id[oid].triplets.append(t)
    report = dataset_stats(corpus)
    holdout = set(args.holdout.split(",")) - {""} if args.holdout else set()
    unknown = holdout - set(VOCABULARY)
    if unknown:
        raise InputError(f"unknown holdout predicate(s) {sorted(unknown)}")
    report["ood"] = ood_splits(corpus, min_count=cfg.ood_min_count, holdout_predicates=holdout)
    _atomic_write_text(args.report, json.dumps(report, indent=2, sort_keys=True) + "\n")
    outputs = [args.report]
    if args.figures:
        from .report import render_predicate_histogram

        fig_path = str(Path(args.report).with_suffix(".png"))
        render_predicate_histogram(report["predicate_histogram"], fig_path)
        outputs.append(fig_path)
    _write_manifest(args.report, "stats", argv, cfg, inputs, outputs)
    print(
        f"stats: {report['objects']} objects, {report['parts']} parts, "
        f"{report['triplets']} triplets -> {args.report}"
    )
    return 0


# ---------------------------------------------------------------------------
# parser wiring
# ---------------------------------------------------------------------------


def _add_common(p: _Parser) -> None:
    p.add_argument("--config", help="JSON config file (strict keys; flags override)")
    p.add_argument("--manifest-only", action="store_true", help="validate inputs and write the manifest only")


def _add_denoiser_flags(p: _Parser) -> None:
    p.add_argument("--target-mu", type=float, default=0.0, help="analytic denoiser target mean")
    p.add_argument("--target-std", type=float, default=1.0, help="analytic denoiser target std")
    p.add_argument("--embedder", default=None, help="hash or file:<path>")


def build_parser() -> _Parser:
    parser = _Parser(prog="partlat", description="part-aware joint latent denoising toolkit")
    parser.add_argument("--version", action="version", version=f"partlat {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("canonicalize", help="captions -> canonical relation triplets")
    p.add_argument("--captions", required=True)
    p.add_argument("--parts", required=True, help="TSV part table: part_id<TAB>label")
    p.add_argument("--embedder", default=None, help="hash or file:<path>")
    p.add_argument("--object-id", default="0")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="triplets.tsv")
    _add_common(p)
    p.set_defaults(func=_cmd_canonicalize)

    p = sub.add_parser("validate", help="check spatial triplets against part boxes")
    p.add_argument("--triplets", required=True)
    p.add_argument("--geometry", required=True, help="TSV: object_id part_id x y z")
    p.add_argument("--eps-rel", "--eps", dest="eps_rel", type=float, default=None)
    p.add_argument("--tau-gap", dest="tau_gap", type=float, default=None)
    p.add_argument("--theta-in", dest="theta_in", type=float, default=None)
    p.add_argument("--theta-sym", dest="theta_sym", type=float, default=None)
    p.add_argument("--out", default="validation.tsv")
    p.add_argument("--figures", action=argparse.BooleanOptionalAction, default=True)
    _add_common(p)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("sample", help="generate an object from noise")
    p.add_argument("--parts", type=int, required=True)
    p.add_argument("--triplets", default=None)
    p.add_argument("--phrases", default=None)
    p.add_argument("--part-labels", dest="part_labels", default=None)
    p.add_argument("--schedule", choices=["cosine-vp", "linear-vp"], default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--k-m", dest="k_m", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="object.pltf")
    _add_denoiser_flags(p)
    _add_common(p)
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("edit", help="re-denoise one part under new phrases")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--target", type=int, required=True)
    p.add_argument("--phrases", required=True, help="new local phrases (one per line)")
    p.add_argument("--orig-phrases", dest="orig_phrases", default=None, help="phrases the object was sampled with")
    p.add_argument("--triplets", default=None)
    p.add_argument("--tau", type=int, required=True)
    p.add_argument("--k-sync", dest="k_sync", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="edited.pltf")
    _add_denoiser_flags(p)
    _add_common(p)
    p.set_defaults(func=_cmd_edit)

    p = sub.add_parser("scene", help="jointly refine sampled objects under scene relations")
    p.add_argument("--objects", nargs="+", required=True)
    p.add_argument("--scene-triplets", dest="scene_triplets", default=None)
    p.add_argument("--embedder", default=None, help="hash or file:<path>")
    p.add_argument("--k-refine", dest="k_refine", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", dest="out_dir", default=".")
    _add_common(p)
    p.set_defaults(func=_cmd_scene)

    p = sub.add_parser("metrics", help="geometry metrics for a pred/gt cloud pair")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--report", default="metrics.json")
    p.add_argument("--voxel-resolution", dest="voxel_resolution", type=int, default=None)
    p.add_argument("--tau", type=float, default=None, help="F-score distance threshold")
    p.add_argument("--figures", action=argparse.BooleanOptionalAction, default=True)
    _add_common(p)
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("articulate", help="fit per-part rigid motion between two poses")
    p.add_argument("--pose-a", dest="pose_a", required=True)
    p.add_argument("--pose-b", dest="pose_b", required=True)
    p.add_argument("--parts", required=True, help="part index file: one part id per point line")
    p.add_argument("--s", type=float, default=1.0)
    p.add_argument("--out", default="reassembled.xyz")
    _add_common(p)
    p.set_defaults(func=_cmd_articulate)

    p = sub.add_parser("stats", help="corpus statistics and OOD splits")
    p.add_argument("--corpus", required=True, help="corpus JSON")
    p.add_argument("--triplets", default=None, help="extra triplet TSV merged by object id")
    p.add_argument("--holdout", default="", help="comma-separated held-out predicates")
    p.add_argument("--min-count", dest="min_count", type=int, default=None)
    p.add_argument("--report", default="stats.json")
    p.add_argument("--figures", action=argparse.BooleanOptionalAction, default=True)
    _add_common(p)
    p.set_defaults(func=_cmd_stats)

    return parser


def run_command(argv: list[str]) -> int:
    """Dispatch one CLI invocation; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError(parser.format_usage())
        return args.func(args, argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"partlat: missing file: {exc.filename or exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"partlat: numeric failure: {exc}", file=sys.stderr)
        return 3
    except PartlatError as exc:
        print(f"partlat: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"partlat: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
