"""Experiment orchestration: train, attack grid, defense grid, reports.

run_benchmark is pure compute and fully deterministic in its config:
it trains the model (plus a label-smoothed twin when the LbS defense is
requested), attacks every evaluation sample once per attack preset,
reuses those adversarial images across the input-transform defenses,
and evaluates every cell of the grid in the requested modes.
write_reports serializes the result; report.json contains no timing or
timestamps, so reruns with the same config are byte-identical. Wall
times go to a separate timings.json.
"""

import hashlib
import json
import os
import time
from dataclasses import asdict, dataclass, replace

import numpy as np

from .attacks import ATTACK_PRESETS, attack_batch
from .dataset import SYNTH_PRESETS, generate_synthetic, load_bundle
from .defenses import (DEFENSE_PRESETS, DefenseConfig, LabelSmoothingDefense,
                       defend_batch)
from .evaluate import (PredictionRecord, defense_effect_categories,
                       gzsl_metrics, per_class_top1, transition_cf_fc_ff,
                       transition_seen_unseen)
from .model import (DEFAULT_LAYER_DIMS, FeatureExtractor, TrainConfig,
                    predict, train_ale)
from .seeding import derive_seed

MODES = ("zsl", "gzsl")
SCOPES = ("all", "only_correct")

# Core defense evaluation subset: two settings per attack algorithm.
# The full grid runs anyway; report tables mark the extra rows.
CORE_DEFENSE_SUBSET = ("FGSM_1", "FGSM_2", "DEFO_1", "DEFO_3",
                        "CaWa_1", "CaWa_3")


@dataclass
class ExperimentConfig:
    dataset: dict        # {"preset": name, "seed": int} or {"path": dir}
    train: TrainConfig
    attacks: list
    defenses: list
    modes: tuple = MODES
    attack_scope: str = "all"
    out_dir: str = "runs/out"
    seed: int = 0
    extractor_dims: tuple = DEFAULT_LAYER_DIMS

    def __post_init__(self):
        self.modes = tuple(self.modes)
        if not self.modes or any(m not in MODES for m in self.modes):
            raise ValueError(f"modes must be a non-empty subset of {MODES}")
        if self.attack_scope not in SCOPES:
            raise ValueError(f"attack_scope must be one of {SCOPES}")
        for name in self.attacks:
            if name not in ATTACK_PRESETS:
                raise ValueError(f"unknown attack preset {name!r}")
        for name in self.defenses:
            if name not in DEFENSE_PRESETS:
                raise ValueError(f"unknown defense preset {name!r}")
        if ("preset" in self.dataset) == ("path" in self.dataset):
            raise ValueError("dataset needs exactly one of 'preset' or 'path'")
        if "preset" in self.dataset \
                and self.dataset["preset"] not in SYNTH_PRESETS:
            raise ValueError(f"unknown synth preset {self.dataset['preset']!r}")


def default_config(out_dir, scope="all", seed=17):
    """The standard full-grid benchmark on the frozen synthetic dataset."""
    return ExperimentConfig(
        dataset={"preset": "cub_like", "seed": 17},
        train=TrainConfig(seed=derive_seed(seed, "train")),
        attacks=list(ATTACK_PRESETS),
        defenses=["SpS", "TVM", "LbS"],
        modes=MODES,
        attack_scope=scope,
        out_dir=out_dir,
        seed=seed,
    )


_CONFIG_KEYS = {"dataset", "train", "attacks", "defenses", "modes",
                "attack_scope", "out_dir", "seed", "extractor_dims"}


def config_from_dict(data, out_dir=None, seed=None, modes=None, scope=None):
    """Build an ExperimentConfig from a parsed JSON dict plus CLI overrides."""
    unknown = set(data) - _CONFIG_KEYS
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    master = int(seed if seed is not None else data.get("seed", 0))
    train_section = dict(data.get("train", {}))
    if "seed" not in train_section:
        train_section["seed"] = derive_seed(master, "train")
    raw_modes = modes if modes is not None else data.get("modes", list(MODES))
    if raw_modes == "both":
        raw_modes = list(MODES)
    return ExperimentConfig(
        dataset=dict(data.get("dataset", {"preset": "cub_like", "seed": 17})),
        train=TrainConfig(**train_section),
        attacks=list(data.get("attacks", list(ATTACK_PRESETS))),
        defenses=list(data.get("defenses", list(DEFENSE_PRESETS))),
        modes=tuple(raw_modes),
        attack_scope=scope if scope is not None
        else data.get("attack_scope", "all"),
        out_dir=out_dir if out_dir is not None
        else data.get("out_dir", "runs/out"),
        seed=master,
        extractor_dims=tuple(data.get("extractor_dims", DEFAULT_LAYER_DIMS)),
    )


def canonical_config(cfg):
    """Config snapshot for hashing and reports.

    out_dir is where results land, not an experiment parameter, so it
    stays out of the snapshot (and of report.json).
    """
    return {
        "dataset": {k: cfg.dataset[k] for k in sorted(cfg.dataset)},
        "train": asdict(cfg.train),
        "attacks": list(cfg.attacks),
        "defenses": list(cfg.defenses),
        "modes": list(cfg.modes),
        "attack_scope": cfg.attack_scope,
        "seed": int(cfg.seed),
        "extractor_dims": [int(d) for d in cfg.extractor_dims],
    }


@dataclass
class CellResult:
    mode: str
    model_key: str      # "base" or "lbs"
    attack: str         # preset name or None
    defense: str        # preset name or None
    records: list       # of PredictionRecord
    adv_results: dict = None      # sample id -> AdvResult
    defended_images: dict = None  # sample id -> image
    norms: dict = None
    error: str = None
    seconds: float = 0.0


@dataclass
class RunLedger:
    experiment_id: str
    config: dict
    bundle: object
    models: dict
    cells: list
    report: dict
    timings: dict
    scope_info: dict    # (mode, model_key) -> {"eval_ids": [...], ...}

    def cell(self, mode, model_key, attack, defense):
        for cell in self.cells:
            if (cell.mode, cell.model_key, cell.attack, cell.defense) == \
                    (mode, model_key, attack, defense):
                return cell
        return None


def _resolve_bundle(cfg):
    if "path" in cfg.dataset:
        return load_bundle(cfg.dataset["path"])
    preset = SYNTH_PRESETS[cfg.dataset["preset"]]
    seed = cfg.dataset.get("seed")
    if seed is None:
        seed = derive_seed(cfg.seed, "synth")
    return generate_synthetic(preset, int(seed))


def _norm_summary(adv_results):
    if not adv_results:
        return None
    l2 = [r.perturbation_l2 for r in adv_results.values()]
    linf = [r.perturbation_linf for r in adv_results.values()]
    its = [r.iterations_used for r in adv_results.values()]
    crossed = [r.crossed_boundary for r in adv_results.values()]
    return {
        "l2_mean": float(np.mean(l2)),
        "l2_max": float(np.max(l2)),
        "linf_mean": float(np.mean(linf)),
        "linf_max": float(np.max(linf)),
        "iterations_mean": float(np.mean(its)),
        "crossed_rate": float(np.mean(crossed)),
    }


def _row_which(cell):
    if cell.model_key == "lbs":
        return "attacked" if cell.attack else "original"
    if cell.defense:
        return "defended"
    return "attacked" if cell.attack else "original"


def _acc_entry(cell, mode, bundle):
    which = _row_which(cell)
    if not cell.records:
        return {"error": "no samples in scope"}
    if mode == "zsl":
        acc = per_class_top1(cell.records, bundle.split.unseen_classes, which)
        return {"acc": acc}
    seen = set(int(c) for c in bundle.split.seen_classes)
    rec_seen = [r for r in cell.records if int(r.true_class) in seen]
    rec_unseen = [r for r in cell.records if int(r.true_class) not in seen]
    if not rec_seen or not rec_unseen:
        return {"error": "a GZSL partition has no samples in scope"}
    m = gzsl_metrics(rec_seen, rec_unseen, which)
    return {"u": m.u, "s": m.s, "h": m.h}


def _transition_dict(rep):
    return {
        "cf": rep.cf, "fc": rep.fc, "ff": rep.ff,
        "per_class": {str(k): v for k, v in sorted(rep.per_class.items())},
        "excluded_cf": rep.excluded_cf,
        "excluded_fcff": rep.excluded_fcff,
    }


def _seen_unseen_dict(rep):
    return {
        "uu": rep.uu, "us": rep.us, "su": rep.su, "ss": rep.ss,
        "per_class": {str(k): v for k, v in sorted(rep.per_class.items())},
        "unseen_classes_with_changes": rep.unseen_classes_with_changes,
        "seen_classes_with_changes": rep.seen_classes_with_changes,
        "per_class_averaged": rep.per_class_averaged,
    }


def run_benchmark(cfg):
    """Run the full experiment grid; returns an in-memory RunLedger."""
    canonical = canonical_config(cfg)
    blob = json.dumps(canonical, sort_keys=True).encode("utf-8")
    experiment_id = hashlib.sha256(blob).hexdigest()[:16]

    bundle = _resolve_bundle(cfg)
    extractor = FeatureExtractor.seeded(
        bundle.input_dim, cfg.extractor_dims, derive_seed(cfg.seed, "extractor"))
    models = {"base": train_ale(bundle, cfg.train, extractor)}
    input_defenses = [d for d in cfg.defenses
                      if isinstance(DEFENSE_PRESETS[d], DefenseConfig)]
    lbs_names = [d for d in cfg.defenses
                 if isinstance(DEFENSE_PRESETS[d], LabelSmoothingDefense)]
    if lbs_names:
        lbs_cfg = replace(cfg.train,
                          label_smoothing=DEFENSE_PRESETS[lbs_names[0]].smoothing)
        models["lbs"] = train_ale(bundle, lbs_cfg, extractor)

    defense_cfgs = {
        name: replace(DEFENSE_PRESETS[name], seed=derive_seed(cfg.seed, "tvm"))
        for name in input_defenses
    }

    cells = []
    timings = {}
    scope_info = {}
    labels = bundle.labels
    sp = bundle.split

    def add_cell(cell, t0):
        cell.seconds = time.perf_counter() - t0
        key = "/".join([cell.mode, cell.model_key,
                        cell.attack or "none", cell.defense or "none"])
        timings[key] = cell.seconds
        cells.append(cell)

    for mode in cfg.modes:
        if mode == "zsl":
            space = sorted(int(c) for c in sp.unseen_classes)
            eval_ids = sorted(int(i) for i in sp.test_unseen_indices)
        else:
            space = sorted(int(c) for c in
                           list(sp.seen_classes) + list(sp.unseen_classes))
            eval_ids = sorted(int(i) for i in
                              list(sp.test_seen_indices)
                              + list(sp.test_unseen_indices))
        for model_key in models:
            model = models[model_key]
            lbs_tag = None if model_key == "base" else lbs_names[0]
            pred_clean = {i: predict(bundle.images[i], model, space)
                          for i in eval_ids}
            if cfg.attack_scope == "only_correct":
                ids_used = [i for i in eval_ids
                            if pred_clean[i] == int(labels[i])]
            else:
                ids_used = list(eval_ids)
            scope_info[(mode, model_key)] = {
                "eval_ids": ids_used,
                "n_candidates": len(eval_ids),
                "n_in_scope": len(ids_used),
            }

            def records_for(ids, attacked=None, defended=None):
                return [PredictionRecord(
                    sample_id=i,
                    true_class=int(labels[i]),
                    pred_original=pred_clean[i],
                    pred_attacked=None if attacked is None else attacked[i],
                    pred_defended=None if defended is None else defended[i],
                ) for i in ids]

            t0 = time.perf_counter()
            add_cell(CellResult(mode, model_key, None, lbs_tag,
                                records_for(ids_used)), t0)

            if model_key == "base":
                for dname in input_defenses:
                    t0 = time.perf_counter()
                    imgs = defend_batch([bundle.images[i] for i in ids_used],
                                        defense_cfgs[dname],
                                        sample_ids=ids_used)
                    pred_def = {i: predict(img, model, space)
                                for i, img in zip(ids_used, imgs)}
                    add_cell(CellResult(
                        mode, model_key, None, dname,
                        records_for(ids_used, defended=pred_def),
                        defended_images=dict(zip(ids_used, imgs))), t0)

            for aname in cfg.attacks:
                t0 = time.perf_counter()
                results = attack_batch(bundle, ids_used, model, space,
                                       ATTACK_PRESETS[aname], mode="all")
                adv = {sid: res for sid, res in results}
                pred_att = {sid: predict(res.adv_image, model, space)
                            for sid, res in results}
                add_cell(CellResult(
                    mode, model_key, aname, lbs_tag,
                    records_for(ids_used, attacked=pred_att),
                    adv_results=adv, norms=_norm_summary(adv)), t0)

                if model_key == "base":
                    for dname in input_defenses:
                        t0 = time.perf_counter()
                        imgs = defend_batch(
                            [adv[i].adv_image for i in ids_used],
                            defense_cfgs[dname], sample_ids=ids_used)
                        pred_def = {i: predict(img, model, space)
                                    for i, img in zip(ids_used, imgs)}
                        add_cell(CellResult(
                            mode, model_key, aname, dname,
                            records_for(ids_used, attacked=pred_att,
                                        defended=pred_def),
                            adv_results=adv,
                            defended_images=dict(zip(ids_used, imgs)),
                            norms=_norm_summary(adv)), t0)

    report = _build_report(cfg, canonical, experiment_id, bundle, cells,
                           input_defenses, lbs_names, scope_info)
    return RunLedger(experiment_id, canonical, bundle, models, cells,
                     report, timings, scope_info)


def _build_report(cfg, canonical, experiment_id, bundle, cells,
                  input_defenses, lbs_names, scope_info):
    sp = bundle.split
    report = {
        "experiment_id": experiment_id,
        "config": canonical,
        "dataset": {
            "name": bundle.meta.name,
            "n_samples": bundle.n_samples,
            "n_classes": bundle.n_classes,
            "seen_classes": [int(c) for c in sp.seen_classes],
            "unseen_classes": [int(c) for c in sp.unseen_classes],
            "counts": {
                "train": len(sp.train_indices),
                "test_seen": len(sp.test_seen_indices),
                "test_unseen": len(sp.test_unseen_indices),
            },
        },
        "core_defense_subset": list(CORE_DEFENSE_SUBSET),
        "modes": {},
    }

    def find(mode, model_key, attack, defense):
        for cell in cells:
            if (cell.mode, cell.model_key, cell.attack, cell.defense) == \
                    (mode, model_key, attack, defense):
                return cell
        return None

    for mode in cfg.modes:
        block = {
            "scope": {
                mk: {"n_candidates": scope_info[(mode, mk)]["n_candidates"],
                     "n_in_scope": scope_info[(mode, mk)]["n_in_scope"]}
                for mk in sorted(set(c.model_key for c in cells
                                     if c.mode == mode))
            },
            "original": None,
            "attacks": {},
            "defense_on_clean": {},
            "attack_then_defense": {},
            "perturbation": {},
            "transitions_cf_fc_ff": {},
            "defense_effects": {},
        }
        base_orig = find(mode, "base", None, None)
        block["original"] = _acc_entry(base_orig, mode, bundle)

        for aname in cfg.attacks:
            cell = find(mode, "base", aname, None)
            block["attacks"][aname] = _acc_entry(cell, mode, bundle)
            if cell.norms:
                block["perturbation"][aname] = cell.norms
            if cell.records:
                if mode == "gzsl":
                    groups = {
                        "all": sorted(set(int(c) for c in sp.seen_classes)
                                      | set(int(c) for c in sp.unseen_classes)),
                        "seen": sorted(int(c) for c in sp.seen_classes),
                        "unseen": sorted(int(c) for c in sp.unseen_classes),
                    }
                else:
                    groups = {"all": sorted(int(c) for c in sp.unseen_classes)}
                block["transitions_cf_fc_ff"][aname] = {
                    g: _transition_dict(transition_cf_fc_ff(cell.records, ids))
                    for g, ids in groups.items()
                }
        if mode == "gzsl":
            block["transitions_seen_unseen"] = {}
            for aname in cfg.attacks:
                cell = find(mode, "base", aname, None)
                if cell.records:
                    block["transitions_seen_unseen"][aname] = \
                        _seen_unseen_dict(transition_seen_unseen(cell.records, sp))

        for dname in input_defenses:
            clean_cell = find(mode, "base", None, dname)
            block["defense_on_clean"][dname] = _acc_entry(clean_cell, mode,
                                                          bundle)
            rows = {}
            effects = {}
            for aname in cfg.attacks:
                cell = find(mode, "base", aname, dname)
                rows[aname] = _acc_entry(cell, mode, bundle)
                if cell.records:
                    eff = defense_effect_categories(cell.records)
                    effects[aname] = {
                        "counts": eff.counts,
                        "total": eff.total,
                        "recovery_changed": eff.recovery_changed,
                        "recovery_all": eff.recovery_all,
                    }
            block["attack_then_defense"][dname] = rows
            block["defense_effects"][dname] = effects

        for lname in lbs_names:
            clean_cell = find(mode, "lbs", None, lname)
            block["defense_on_clean"][lname] = _acc_entry(clean_cell, mode,
                                                          bundle)
            rows = {}
            pert = {}
            for aname in cfg.attacks:
                cell = find(mode, "lbs", aname, lname)
                rows[aname] = _acc_entry(cell, mode, bundle)
                if cell.norms:
                    pert[aname] = cell.norms
            block["attack_then_defense"][lname] = rows
            if pert:
                block["perturbation_lbs"] = pert

        report["modes"][mode] = block
    return report


def _fmt_cell(entry, key):
    if entry is None or "error" in entry:
        return "-"
    v = entry.get(key)
    return "-" if v is None else f"{v:.1f}"


def _md_accuracy_table(block, mode, rows):
    lines = []
    if mode == "gzsl":
        lines.append("| Row | u | s | h |")
        lines.append("|---|---|---|---|")
        for name, entry in rows:
            lines.append(f"| {name} | {_fmt_cell(entry, 'u')} | "
                         f"{_fmt_cell(entry, 's')} | {_fmt_cell(entry, 'h')} |")
    else:
        lines.append("| Row | acc |")
        lines.append("|---|---|")
        for name, entry in rows:
            lines.append(f"| {name} | {_fmt_cell(entry, 'acc')} |")
    return lines


def render_markdown(report, attacks, defenses):
    """Human-readable report with the benchmark's standard row names."""
    subset = set(report["core_defense_subset"])
    out = []
    out.append("# Zero-shot adversarial benchmark report")
    out.append("")
    ds = report["dataset"]
    out.append(f"Experiment `{report['experiment_id']}` on dataset "
               f"`{ds['name']}` ({ds['n_samples']} samples, "
               f"{ds['n_classes']} classes, scope "
               f"`{report['config']['attack_scope']}`).")
    out.append("")
    for mode, block in report["modes"].items():
        title = mode.upper()
        out.append(f"## {title} accuracy")
        out.append("")
        rows = [("Original", block["original"])]
        rows += [(a, block["attacks"][a]) for a in attacks]
        out += _md_accuracy_table(block, mode, rows)
        out.append("")
        for dname in defenses:
            if dname not in block["defense_on_clean"]:
                continue
            out.append(f"## {title}, defense {dname}")
            out.append("")
            rows = [("Original (defended clean)",
                     block["defense_on_clean"][dname])]
            for aname in attacks:
                entry = block["attack_then_defense"][dname].get(aname)
                mark = "" if aname in subset else " *"
                rows.append((aname + mark, entry))
            out += _md_accuracy_table(block, mode, rows)
            out.append("")
        if block.get("transitions_cf_fc_ff"):
            out.append(f"## {title} class transitions under attack (CF / FC / FF)")
            out.append("")
            out.append("| Attack | CF | FC | FF |")
            out.append("|---|---|---|---|")
            for aname in attacks:
                rep = block["transitions_cf_fc_ff"].get(aname, {}).get("all")
                if rep is None:
                    continue
                out.append(f"| {aname} | {_fmt_cell(rep, 'cf')} | "
                           f"{_fmt_cell(rep, 'fc')} | {_fmt_cell(rep, 'ff')} |")
            out.append("")
        if block.get("transitions_seen_unseen"):
            out.append(f"## {title} seen/unseen transitions "
                       "(changed predictions)")
            out.append("")
            out.append("| Attack | UU | US | SU | SS |")
            out.append("|---|---|---|---|---|")
            for aname in attacks:
                rep = block["transitions_seen_unseen"].get(aname)
                if rep is None:
                    continue
                out.append(
                    f"| {aname} | {_fmt_cell(rep, 'uu')} | "
                    f"{_fmt_cell(rep, 'us')} | {_fmt_cell(rep, 'su')} | "
                    f"{_fmt_cell(rep, 'ss')} |")
            out.append("")
        if block.get("defense_effects"):
            out.append(f"## {title} defense effect categories")
            out.append("")
            cats = ["CCC", "CCF", "CFC", "CFF", "FCC", "FCF", "FFC", "FFF"]
            out.append("| Attack | Defense | " + " | ".join(cats)
                       + " | recovery |")
            out.append("|---|---|" + "---|" * (len(cats) + 1))
            for dname in defenses:
                effects = block["defense_effects"].get(dname, {})
                for aname in attacks:
                    eff = effects.get(aname)
                    if eff is None:
                        continue
                    counts = " | ".join(str(eff["counts"][c]) for c in cats)
                    rec = eff["recovery_changed"]
                    rec = "-" if rec is None else f"{rec:.1f}"
                    out.append(f"| {aname} | {dname} | {counts} | {rec} |")
            out.append("")
        if block.get("perturbation"):
            out.append(f"## {title} perturbation norms")
            out.append("")
            out.append("| Attack | mean L2 | max L2 | mean Linf | max Linf "
                       "| crossed % |")
            out.append("|---|---|---|---|---|---|")
            for aname in attacks:
                n = block["perturbation"].get(aname)
                if n is None:
                    continue
                out.append(
                    f"| {aname} | {n['l2_mean']:.4f} | {n['l2_max']:.4f} | "
                    f"{n['linf_mean']:.4f} | {n['linf_max']:.4f} | "
                    f"{100.0 * n['crossed_rate']:.1f} |")
            out.append("")
    out.append("Rows marked with * fall outside the core defense subset; "
               "they are extra grid cells this harness runs anyway.")
    out.append("")
    return "\n".join(out)


def write_reports(ledger, out_dir):
    """Write report.json, report.md, ledger.jsonl and timings.json."""
    os.makedirs(out_dir, exist_ok=True)
    report_path = os.path.join(out_dir, "report.json")
    with open(report_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(ledger.report, fh, sort_keys=True, indent=2)
        fh.write("\n")
    attacks = ledger.config["attacks"]
    defenses = ledger.config["defenses"]
    with open(os.path.join(out_dir, "report.md"), "w", encoding="utf-8",
              newline="\n") as fh:
        fh.write(render_markdown(ledger.report, attacks, defenses))
    with open(os.path.join(out_dir, "ledger.jsonl"), "w", encoding="utf-8",
              newline="\n") as fh:
        for cell in ledger.cells:
            line = {
                "mode": cell.mode,
                "model": cell.model_key,
                "attack": cell.attack,
                "defense": cell.defense,
                "error": cell.error,
                "records": [
                    {"sample_id": r.sample_id,
                     "true_class": r.true_class,
                     "pred_original": r.pred_original,
                     "pred_attacked": r.pred_attacked,
                     "pred_defended": r.pred_defended}
                    for r in sorted(cell.records,
                                    key=lambda r: r.sample_id)
                ],
            }
            fh.write(json.dumps(line, sort_keys=True))
            fh.write("\n")
    with open(os.path.join(out_dir, "timings.json"), "w", encoding="utf-8",
              newline="\n") as fh:
        json.dump({k: round(v, 6) for k, v in sorted(ledger.timings.items())},
                  fh, sort_keys=True, indent=2)
        fh.write("\n")
    return report_path


def write_ppm(path, image):
    """Write an image in [0,1] as binary PPM (P6, 8-bit).

    Single-channel images are replicated into equal RGB channels.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] not in (1, 3):
        raise ValueError("PPM export needs an (H, W, 1) or (H, W, 3) image")
    arr = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    if arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    h, w, _ = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def read_ppm(path):
    """Read a binary P6 PPM written by write_ppm; returns (H, W, 3) uint8."""
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P6":
        raise ValueError("not a P6 PPM")
    w, h = (int(t) for t in parts[1].split())
    if parts[2] != b"255":
        raise ValueError("unsupported maxval")
    pixels = np.frombuffer(parts[3][:w * h * 3], dtype=np.uint8)
    return pixels.reshape(h, w, 3)


def export_qualitative(ledger, sample_ids, out_dir, mode=None, attack=None,
                       defense=None):
    """Write original/attacked/defended PPM triples plus JSON sidecars.

    The cell is picked by (mode, attack, defense); defaults are the
    first available mode, the first attack of the run, and the first
    input-transform defense (if any). Unknown sample ids are an error.
    """
    modes = list(ledger.report["modes"])
    if mode is None:
        mode = "gzsl" if "gzsl" in modes else modes[0]
    attacks = [c.attack for c in ledger.cells
               if c.mode == mode and c.model_key == "base" and c.attack]
    if attack is None:
        if not attacks:
            raise ValueError("ledger has no attack cells to export")
        attack = attacks[0]
    input_defs = [c.defense for c in ledger.cells
                  if c.mode == mode and c.model_key == "base"
                  and c.attack == attack and c.defense]
    if defense is None and input_defs:
        defense = input_defs[0]

    cell = ledger.cell(mode, "base", attack, defense) if defense else \
        ledger.cell(mode, "base", attack, None)
    if cell is None:
        raise ValueError(f"no cell for mode={mode} attack={attack} "
                         f"defense={defense}")
    by_id = {r.sample_id: r for r in cell.records}
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for sid in sample_ids:
        sid = int(sid)
        if sid not in by_id:
            raise ValueError(f"unknown sample id {sid}")
        rec = by_id[sid]
        stem = f"sample{sid:04d}_{mode}_{attack}"
        files = {}
        orig_path = os.path.join(out_dir, f"{stem}_original.ppm")
        write_ppm(orig_path, ledger.bundle.images[sid])
        files["original"] = os.path.basename(orig_path)
        if cell.adv_results and sid in cell.adv_results:
            adv_path = os.path.join(out_dir, f"{stem}_attacked.ppm")
            write_ppm(adv_path, cell.adv_results[sid].adv_image)
            files["attacked"] = os.path.basename(adv_path)
        if cell.defended_images and sid in cell.defended_images:
            def_path = os.path.join(out_dir, f"{stem}_defended.ppm")
            write_ppm(def_path, cell.defended_images[sid])
            files["defended"] = os.path.basename(def_path)
        sidecar = {
            "sample_id": sid,
            "mode": mode,
            "attack": attack,
            "defense": defense,
            "true_class": rec.true_class,
            "pred_original": rec.pred_original,
            "pred_attacked": rec.pred_attacked,
            "pred_defended": rec.pred_defended,
            "files": files,
        }
        sidecar_path = os.path.join(out_dir, f"{stem}.json")
        with open(sidecar_path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(sidecar, fh, sort_keys=True, indent=2)
            fh.write("\n")
        written.append(sidecar_path)
    return written


def auto_qualitative(ledger, out_dir, per_attack=1):
    """Export the first prediction-changing sample of each attack preset."""
    modes = list(ledger.report["modes"])
    mode = "gzsl" if "gzsl" in modes else modes[0]
    written = []
    for aname in ledger.config["attacks"]:
        cell = ledger.cell(mode, "base", aname, None)
        if cell is None or not cell.records:
            continue
        changed = sorted(r.sample_id for r in cell.records
                         if r.pred_attacked is not None
                         and r.pred_attacked != r.pred_original)
        if not changed:
            continue
        written += export_qualitative(ledger, changed[:per_attack], out_dir,
                                      mode=mode, attack=aname)
    return written
