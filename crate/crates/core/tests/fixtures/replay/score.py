#!/usr/bin/env python3
"""Scores recorded prediction files from scratch and writes expected_metrics.json.

Only the raw model responses, example counts and fallback flags are taken
from the prediction files; parsing, gold labels and every metric are
recomputed here.

    python3 score.py <prediction-dir>
"""
import json
import re
import sys
from pathlib import Path

HERE = Path(__file__).parent
STRATEGIES = ["zeroshot", "random", "knn", "pattern", "knn-pattern"]
RUNS = {"detect": "detection.jsonl", "extract-single": "detection.jsonl", "extract": "extraction.jsonl"}


def gold(name):
    with open(HERE / name) as f:
        return {r["id"]: r for r in map(json.loads, f)}


def tokens(phrase):
    out = []
    for t in phrase.split():
        i, j = 0, len(t)
        while i < j and not t[i].isalnum():
            i += 1
        while j > i and not t[j - 1].isalnum():
            j -= 1
        if i < j:
            out.append(t[i:j].lower())
    return out


def contained(g, p):
    g, p = tokens(g), tokens(p)
    return bool(g) and any(p[i:i + len(g)] == g for i in range(len(p) - len(g) + 1))


def spans(text):
    causes = [" ".join(m.split()) for m in re.findall(r"<cause>(.*?)</cause>", text, re.S)]
    effects = [" ".join(m.split()) for m in re.findall(r"<effect>(.*?)</effect>", text, re.S)]
    causes, effects = [c for c in causes if c], [e for e in effects if e]
    return list(zip(causes, effects))


def div(a, b):
    return a / b if b else 0.0


def score(run, records, gold_rows):
    if run == "detect":
        tp = fp = tn = fn = bad = 0
        for rec in records:
            y = gold_rows[rec["sentence_id"]]["label"]
            m = re.search(r"\b[01]\b", (rec["raw_response"] or "").strip())
            if m is None:
                bad += 1
                yhat = 1 - y
            else:
                yhat = int(m.group())
            if yhat and y:
                tp += 1
            elif yhat:
                fp += 1
            elif y:
                fn += 1
            else:
                tn += 1
        p, r = div(tp, tp + fp), div(tp, tp + fn)
        out = {"accuracy": div(tp + tn, tp + fp + tn + fn), "f1": div(2 * tp, 2 * tp + fp + fn), "precision": p, "recall": r,
               "unparseable": float(bad)}
    elif run == "extract-single":
        ok = bad = 0
        for rec in records:
            (g,) = gold_rows[rec["sentence_id"]]["pairs"]
            pairs = spans(rec["raw_response"] or "")
            if not pairs:
                bad += 1
                continue
            c, e = pairs[0]
            ok += contained(g["cause"], c) and contained(g["effect"], e)
        out = {"single_pair_accuracy": div(ok, len(records)), "unparseable": float(bad)}
    else:
        gold_t = [(sid, p["cause"], p["effect"]) for sid in sorted(gold_rows) for p in gold_rows[sid]["pairs"]]
        pred_t = [(rec["sentence_id"], c, e) for rec in records for c, e in spans(rec["raw_response"] or "")]
        used, matched = set(), 0
        for sid, gc, ge in gold_t:
            for j, (psid, pc, pe) in enumerate(pred_t):
                if j not in used and psid == sid and contained(gc, pc) and contained(ge, pe):
                    used.add(j)
                    matched += 1
                    break
        p, r = div(matched, len(pred_t)), div(matched, len(gold_t))
        out = {"triplet_precision": p, "triplet_recall": r, "triplet_f1": div(2 * matched, len(pred_t) + len(gold_t))}
    counts = [rec["example_count"] for rec in records]
    out.update({
        "examples_mean": sum(counts) / len(counts),
        "examples_min": float(min(counts)),
        "examples_max": float(max(counts)),
        "fallback_instances": float(sum(rec["fallback_used"] for rec in records)),
    })
    return out


def main():
    pred_dir = Path(sys.argv[1])
    expected = {}
    for strategy in STRATEGIES:
        expected[strategy] = {}
        for run, dataset in RUNS.items():
            rows = gold(dataset)
            if run != "detect":
                rows = {k: v for k, v in rows.items() if v["label"] == 1}
            with open(pred_dir / f"{strategy}__{run}.jsonl") as f:
                records = [json.loads(line) for line in f]
            assert sorted(r["sentence_id"] for r in records) == sorted(rows), (strategy, run)
            expected[strategy][run] = score(run, records, rows)
    with open(HERE / "expected_metrics.json", "w") as f:
        json.dump(expected, f, indent=1, sort_keys=True)
        f.write("\n")


if __name__ == "__main__":
    main()
