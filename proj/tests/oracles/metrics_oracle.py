"""Writes the 20-query metric fixture and its expected values.

Independent of the C++ code: metrics straight from their definitions
(binary gains, log2(rank + 1) discount, IDCG over min(|rel|, k) hits),
exact rational arithmetic via fractions, means via math.fsum.
"""

import json
import math
import random
import sys
from fractions import Fraction
from pathlib import Path

KS = [1, 3, 5, 10]


def dcg(flags):
    return math.fsum(1.0 / math.log2(r + 2) for r, hit in enumerate(flags) if hit)


def ndcg(ranked, rel, k):
    got = dcg([d in rel for d in ranked[:k]])
    ideal = dcg([True] * min(len(rel), k))
    return got / ideal


def mrr(ranked, rel, k):
    for r, d in enumerate(ranked[:k]):
        if d in rel:
            return float(Fraction(1, r + 1))
    return 0.0


def recall(ranked, rel, k):
    return float(Fraction(sum(d in rel for d in ranked[:k]), len(rel)))


def build():
    rng = random.Random(7)
    docs = [f"d{i:02d}" for i in range(40)]
    run, qrels = {}, {}
    for q in range(1, 21):
        qid = f"q{q:02d}"
        ranked = rng.sample(docs, 10)
        run[qid] = ranked
        n_rel = rng.choice([1, 1, 2, 3])
        pool = ranked[:6] + rng.sample([d for d in docs if d not in ranked], 2)
        qrels[qid] = {d: 1 for d in rng.sample(pool, n_rel)}
    # single relevant at rank 3: every nDCG@k>=3 is 1/log2(4) = 0.5
    run["q05"] = ["d10", "d11", "d12", "d13", "d14", "d15", "d16", "d17", "d18", "d19"]
    qrels["q05"] = {"d12": 1}
    # relevant at rank 1
    qrels["q07"] = {run["q07"][0]: 1}
    # judged but nothing relevant: excluded from the means
    qrels["q09"] = {run["q09"][0]: 0}
    # relevant passage never retrieved
    qrels["q20"] = {"d99": 1}
    return run, qrels


def main(out_dir):
    out = Path(out_dir)
    run, qrels = build()
    with open(out / "metrics_run.trec", "w") as f:
        for qid in sorted(run):
            for r, d in enumerate(run[qid]):
                f.write(f"{qid} Q0 {d} {r + 1} {100 - r} oracle\n")
    with open(out / "metrics_qrels.tsv", "w") as f:
        for qid in sorted(qrels):
            for d, g in sorted(qrels[qid].items()):
                f.write(f"{qid}\t{d}\t{g}\n")

    per_query, sums = {}, {}
    scored = [q for q in sorted(qrels) if any(g > 0 for g in qrels[q].values())]
    for qid in scored:
        rel = {d for d, g in qrels[qid].items() if g > 0}
        vals = {}
        for k in KS:
            vals[f"ndcg@{k}"] = ndcg(run[qid], rel, k)
            vals[f"mrr@{k}"] = mrr(run[qid], rel, k)
            vals[f"recall@{k}"] = recall(run[qid], rel, k)
        per_query[qid] = vals
        for name, v in vals.items():
            sums.setdefault(name, []).append(v)
    means = {name: math.fsum(v) / len(v) for name, v in sums.items()}
    hits_at_1 = sum(run[q][0] in {d for d, g in qrels[q].items() if g > 0} for q in scored)
    expected = {
        "ks": KS,
        "query_count": len(scored),
        "empty_relevance": len(qrels) - len(scored),
        "accuracy@1": hits_at_1 / len(scored),
        "means": means,
        "per_query": per_query,
    }
    with open(out / "metrics_expected.json", "w") as f:
        json.dump(expected, f, indent=1, sort_keys=True)
        f.write("\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).resolve().parent.parent / "fixtures")
