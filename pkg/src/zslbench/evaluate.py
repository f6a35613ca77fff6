"""ZSL/GZSL accuracy metrics and class-transition analytics.

Everything here consumes immutable prediction ledgers: one
PredictionRecord per evaluated sample, carrying the true class and the
original / attacked / defended predictions. Accuracies are per-class
top-1 by default (mean over classes of the within-class accuracy); the
pooled sample-weighted variant is kept separate because the two
genuinely disagree on unbalanced data.
"""

from dataclasses import dataclass

import numpy as np

WHICH_FIELDS = ("original", "attacked", "defended")
DEFENSE_EFFECT_CATEGORIES = ("CCC", "CCF", "CFC", "CFF",
                             "FCC", "FCF", "FFC", "FFF")


@dataclass
class PredictionRecord:
    sample_id: int
    true_class: int
    pred_original: int
    pred_attacked: int = None
    pred_defended: int = None


def _pred(record, which):
    if which == "original":
        return record.pred_original
    if which == "attacked":
        return record.pred_attacked
    if which == "defended":
        return record.pred_defended
    raise ValueError(f"which must be one of {WHICH_FIELDS}")


def per_class_detail(records, class_set, which="original"):
    """Per-class accuracy map plus the classes excluded for lack of records."""
    if not records:
        raise ValueError("empty record set")
    per_class = {}
    excluded = []
    for cid in sorted(int(c) for c in class_set):
        hits = [r for r in records if int(r.true_class) == cid]
        if not hits:
            excluded.append(cid)
            continue
        pred = [_pred(r, which) for r in hits]
        if any(p is None for p in pred):
            raise ValueError(f"record missing '{which}' prediction")
        correct = sum(1 for r, p in zip(hits, pred) if int(p) == cid)
        per_class[cid] = 100.0 * correct / len(hits)
    return per_class, excluded


def per_class_top1(records, class_set, which="original"):
    """Mean over classes of the within-class top-1 accuracy, in percent."""
    per_class, _ = per_class_detail(records, class_set, which)
    if not per_class:
        raise ValueError("no class in class_set has records")
    return float(np.mean(list(per_class.values())))


def pooled_top1(records, which="original"):
    """Sample-weighted top-1 accuracy, in percent."""
    if not records:
        raise ValueError("empty record set")
    pred = [_pred(r, which) for r in records]
    if any(p is None for p in pred):
        raise ValueError(f"record missing '{which}' prediction")
    correct = sum(1 for r, p in zip(records, pred)
                  if int(p) == int(r.true_class))
    return 100.0 * correct / len(records)


@dataclass
class GzslMetrics:
    u: float
    s: float
    h: float


def harmonic_score(u, s):
    return 0.0 if u + s == 0 else 2.0 * u * s / (u + s)


def gzsl_metrics(records_seen, records_unseen, which="original"):
    """u, s, h over prediction ledgers made in the joint search space.

    u and s are per-class top-1 over the unseen and seen partitions; the
    class set of each partition is the set of true classes appearing in
    it. h is the harmonic mean, 0 when u + s = 0.
    """
    if not records_seen or not records_unseen:
        raise ValueError("both seen and unseen record sets must be non-empty")
    seen_classes = sorted(set(int(r.true_class) for r in records_seen))
    unseen_classes = sorted(set(int(r.true_class) for r in records_unseen))
    s = per_class_top1(records_seen, seen_classes, which)
    u = per_class_top1(records_unseen, unseen_classes, which)
    return GzslMetrics(u=u, s=s, h=harmonic_score(u, s))


@dataclass
class TransitionReport:
    cf: float           # % originally correct that turned false, or None
    fc: float           # % originally false that turned correct, or None
    ff: float           # % originally false that moved to another false class
    per_class: dict     # class id -> dict of cf/fc/ff/unchanged_false/counts
    excluded_cf: list   # classes with no originally correct predictions
    excluded_fcff: list  # classes with no originally false predictions


def transition_cf_fc_ff(records, class_group):
    """Attack-induced transitions, per-class normalized then averaged.

    CF is measured among each class's originally correct predictions;
    FC, FF and unchanged-false among its originally false ones. Classes
    lacking a denominator are excluded from the corresponding average
    and reported.
    """
    per_class = {}
    cf_vals, fc_vals, ff_vals = [], [], []
    excluded_cf, excluded_fcff = [], []
    for cid in sorted(int(c) for c in class_group):
        hits = [r for r in records if int(r.true_class) == cid]
        if any(r.pred_attacked is None for r in hits):
            raise ValueError("records lack attacked predictions")
        correct = [r for r in hits if int(r.pred_original) == cid]
        false = [r for r in hits if int(r.pred_original) != cid]
        entry = {"n_correct": len(correct), "n_false": len(false)}
        if correct:
            flips = sum(1 for r in correct if int(r.pred_attacked) != cid)
            entry["cf"] = 100.0 * flips / len(correct)
            cf_vals.append(entry["cf"])
        else:
            excluded_cf.append(cid)
        if false:
            to_correct = sum(1 for r in false if int(r.pred_attacked) == cid)
            to_other = sum(
                1 for r in false
                if int(r.pred_attacked) != cid
                and int(r.pred_attacked) != int(r.pred_original)
            )
            unchanged = len(false) - to_correct - to_other
            entry["fc"] = 100.0 * to_correct / len(false)
            entry["ff"] = 100.0 * to_other / len(false)
            entry["unchanged_false"] = 100.0 * unchanged / len(false)
            fc_vals.append(entry["fc"])
            ff_vals.append(entry["ff"])
        else:
            excluded_fcff.append(cid)
        per_class[cid] = entry
    return TransitionReport(
        cf=float(np.mean(cf_vals)) if cf_vals else None,
        fc=float(np.mean(fc_vals)) if fc_vals else None,
        ff=float(np.mean(ff_vals)) if ff_vals else None,
        per_class=per_class,
        excluded_cf=excluded_cf,
        excluded_fcff=excluded_fcff,
    )


@dataclass
class SeenUnseenReport:
    uu: float  # averages over classes with changed predictions, or None
    us: float
    su: float
    ss: float
    per_class: dict
    unseen_classes_with_changes: int
    seen_classes_with_changes: int
    per_class_averaged: bool


def transition_seen_unseen(records, split, per_class=True):
    """Destination group of changed predictions, split by true-class group.

    A sample counts as changed when its attacked prediction differs from
    its original prediction, correct or not. Among changed samples of
    each true class, the report gives the percentage whose destination
    is a seen vs an unseen class; classes with no changed samples are
    skipped (their denominators are zero). per_class=False pools all
    changed samples of a group instead of averaging class ratios.
    """
    seen = set(int(c) for c in split.seen_classes)
    unseen = set(int(c) for c in split.unseen_classes)
    if any(r.pred_attacked is None for r in records):
        raise ValueError("records lack attacked predictions")

    def group_stats(group_classes):
        class_ratio_to_unseen = {}
        pooled_changed, pooled_to_unseen = 0, 0
        for cid in sorted(group_classes):
            changed = [r for r in records
                       if int(r.true_class) == cid
                       and int(r.pred_attacked) != int(r.pred_original)]
            if not changed:
                continue
            to_unseen = sum(1 for r in changed
                            if int(r.pred_attacked) in unseen)
            class_ratio_to_unseen[cid] = 100.0 * to_unseen / len(changed)
            pooled_changed += len(changed)
            pooled_to_unseen += to_unseen
        if not class_ratio_to_unseen:
            return None, None, {}, 0
        if per_class:
            to_unseen_pct = float(np.mean(list(class_ratio_to_unseen.values())))
        else:
            to_unseen_pct = 100.0 * pooled_to_unseen / pooled_changed
        return to_unseen_pct, 100.0 - to_unseen_pct, class_ratio_to_unseen, \
            len(class_ratio_to_unseen)

    uu, us, unseen_detail, n_unseen = group_stats(unseen)
    su, ss, seen_detail, n_seen = group_stats(seen)
    detail = {cid: {"to_unseen": v, "to_seen": 100.0 - v}
              for cid, v in {**unseen_detail, **seen_detail}.items()}
    return SeenUnseenReport(
        uu=uu, us=us, su=su, ss=ss, per_class=detail,
        unseen_classes_with_changes=n_unseen,
        seen_classes_with_changes=n_seen,
        per_class_averaged=per_class,
    )


@dataclass
class DefenseEffectReport:
    counts: dict          # category -> count, all 8 categories present
    total: int
    recovery_changed: float  # % of attack-changed records whose defended
                             # prediction equals the original one, or None
    recovery_all: float      # same ratio over all records


def defense_effect_categories(records):
    """Correctness triple (original, attacked, defended) per record.

    Category letters mark correct/false at each stage; the counts always
    partition the record set. Recovery is about recovering the original
    label, not necessarily the correct one.
    """
    counts = {cat: 0 for cat in DEFENSE_EFFECT_CATEGORIES}
    changed, recovered_changed, recovered_all = 0, 0, 0
    for r in records:
        if r.pred_attacked is None or r.pred_defended is None:
            raise ValueError("records lack attacked or defended predictions")
        true = int(r.true_class)
        triple = "".join(
            "C" if int(p) == true else "F"
            for p in (r.pred_original, r.pred_attacked, r.pred_defended)
        )
        counts[triple] += 1
        if int(r.pred_defended) == int(r.pred_original):
            recovered_all += 1
        if int(r.pred_attacked) != int(r.pred_original):
            changed += 1
            if int(r.pred_defended) == int(r.pred_original):
                recovered_changed += 1
    total = len(records)
    return DefenseEffectReport(
        counts=counts,
        total=total,
        recovery_changed=(100.0 * recovered_changed / changed
                          if changed else None),
        recovery_all=(100.0 * recovered_all / total if total else None),
    )
