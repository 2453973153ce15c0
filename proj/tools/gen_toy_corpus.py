#!/usr/bin/env python3
"""Generate the bundled toy retrieval collection.

Documents are drawn from topics. Queries name a target document by a couple
of its rare words plus topic words, but about half of the topic words are
replaced by query-only synonyms that never occur in documents. Lexical
matching misses those; a translation model trained on relevant pairs can
bridge them.

Output (in --out):
  docs.jsonl, queries_{bitext,train,test}.jsonl, qrels_{bitext,train,test}.txt,
  embed_query.txt, embed_doc.txt

The bitext split is meant for translation-model training, the train split
for fusion training.
"""

import argparse
import json
import math
import random
from pathlib import Path

N_TOPICS = 40
TOPIC_WORDS = 12
BACKGROUND = 400
RARE_PER_DOC = 3
RARE_POOL = 1200
DIM = 16


def word(prefix, i):
    return f"{prefix}{i:03d}"


def unit(rng, dim):
    v = [rng.gauss(0.0, 1.0) for _ in range(dim)]
    n = math.sqrt(sum(x * x for x in v))
    return [x / n for x in v]


def jitter(rng, base, scale):
    return [b + rng.gauss(0.0, scale) for b in base]


def write_embeddings(path, table):
    with open(path, "w") as f:
        f.write(f"{len(table)} {DIM}\n")
        for tok in sorted(table):
            f.write(tok + " " + " ".join(f"{x:.6f}" for x in table[tok]) + "\n")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data/toy")
    ap.add_argument("--docs", type=int, default=1000)
    ap.add_argument("--bitext-queries", type=int, default=2000)
    ap.add_argument("--train-queries", type=int, default=300)
    ap.add_argument("--test-queries", type=int, default=100)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    rng = random.Random(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    topic_words = [[f"t{t:02d}w{i:02d}" for i in range(TOPIC_WORDS)] for t in range(N_TOPICS)]
    synonyms = {w: "q" + w for ws in topic_words for w in ws}
    background = [word("bg", i) for i in range(BACKGROUND)]
    bg_weights = [1.0 / (i + 1) for i in range(BACKGROUND)]

    docs = []
    for d in range(args.docs):
        topic = rng.randrange(N_TOPICS)
        length = int(rng.lognormvariate(4.0, 0.5)) + 8
        rare = [f"r{rng.randrange(RARE_POOL):04d}" for _ in range(RARE_PER_DOC)]
        tokens = []
        for _ in range(length):
            u = rng.random()
            if u < 0.3:
                tokens.append(rng.choice(topic_words[topic]))
            elif u < 0.36:
                tokens.append(rng.choice(rare))
            else:
                tokens.append(rng.choices(background, bg_weights)[0])
        for r in rare:
            if r not in tokens:
                tokens.insert(rng.randrange(len(tokens) + 1), r)
        title = " ".join(rng.sample(topic_words[topic], 3))
        docs.append({"DOCNO": f"d{d:04d}", "text": " ".join(tokens), "title": title, "topic": topic, "rare": rare})

    by_topic = {}
    for doc in docs:
        by_topic.setdefault(doc["topic"], []).append(doc)

    def make_queries(n, prefix):
        queries, qrels = [], []
        for i in range(n):
            target = rng.choice(docs)
            topic = target["topic"]
            doc_tokens = target["text"].split()
            topical = [t for t in doc_tokens if t in synonyms]
            picks = rng.sample(topical, min(len(topical), rng.randint(2, 4))) or rng.sample(topic_words[topic], 2)
            words = [synonyms[w] if rng.random() < 0.6 else w for w in picks]
            if rng.random() < 0.4:
                words.append(rng.choice(target["rare"]))
            if rng.random() < 0.5:
                words.append(rng.choices(background, bg_weights)[0])
            rng.shuffle(words)
            qid = f"{prefix}{i:03d}"
            queries.append({"DOCNO": qid, "text": " ".join(words)})
            qrels.append((qid, target["DOCNO"], 2))
            peers = [d for d in by_topic[topic] if d is not target]
            if rng.random() < 0.5:
                peer = rng.choice(peers)
                qrels.append((qid, peer["DOCNO"], 1))
        return queries, qrels

    bitext_q, bitext_rel = make_queries(args.bitext_queries, "bt")
    train_q, train_rel = make_queries(args.train_queries, "tr")
    test_q, test_rel = make_queries(args.test_queries, "te")

    with open(out / "docs.jsonl", "w") as f:
        for doc in docs:
            f.write(json.dumps({"DOCNO": doc["DOCNO"], "text": doc["text"], "title": doc["title"]}) + "\n")
    splits = (("bitext", bitext_q, bitext_rel), ("train", train_q, train_rel), ("test", test_q, test_rel))
    for name, qs, rels in splits:
        with open(out / f"queries_{name}.jsonl", "w") as f:
            for q in qs:
                f.write(json.dumps(q) + "\n")
        with open(out / f"qrels_{name}.txt", "w") as f:
            for qid, docno, grade in rels:
                f.write(f"{qid} 0 {docno} {grade}\n")

    centers = [unit(rng, DIM) for _ in range(N_TOPICS)]
    doc_emb, query_emb = {}, {}
    for t, ws in enumerate(topic_words):
        for w in ws:
            v = jitter(rng, centers[t], 0.35)
            doc_emb[w] = v
            query_emb[w] = v
            query_emb[synonyms[w]] = jitter(rng, v, 0.15)
    for w in background:
        v = unit(rng, DIM)
        doc_emb[w] = v
        query_emb[w] = v
    write_embeddings(out / "embed_doc.txt", doc_emb)
    write_embeddings(out / "embed_query.txt", query_emb)
    print(f"{len(docs)} docs, {len(bitext_q)} bitext / {len(train_q)} train / {len(test_q)} test queries -> {out}")


if __name__ == "__main__":
    main()
