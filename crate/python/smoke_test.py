"""End-to-end smoke test for the textmtl Python module.

Builds the extension if needed, imports it, and walks the whole surface:
tensor autodiff, text cleaning, vocabulary encoding, metrics, a small
training run, checkpoint loading, prediction, evaluation, and comparison.

Run from the repository root:

    python3 python/smoke_test.py
"""

import csv
import math
import pathlib
import random
import shutil
import subprocess
import sys
import tempfile

REPO = pathlib.Path(__file__).resolve().parent.parent


def build_and_import():
    lib = REPO / "target" / "debug" / "libtextmtl.so"
    if not lib.exists():
        subprocess.run(
            ["cargo", "build", "-p", "textmtl-python"], cwd=REPO, check=True
        )
    stage = pathlib.Path(tempfile.mkdtemp(prefix="textmtl-py-"))
    shutil.copy2(lib, stage / "textmtl.so")
    sys.path.insert(0, str(stage))
    import textmtl

    return textmtl


def check(name, ok, detail=""):
    status = "ok" if ok else "FAIL"
    print(f"  [{status}] {name}" + (f"  ({detail})" if detail else ""))
    if not ok:
        sys.exit(1)


def tensor_smoke(textmtl):
    print("tensor:")
    a = textmtl.Tensor([1.0, 2.0, 3.0, 4.0], [2, 2], requires_grad=True)
    b = textmtl.Tensor([1.0, 0.0, 0.0, 1.0], [2, 2])
    product = a.matmul(b)
    check("matmul identity", product.tolist() == [1.0, 2.0, 3.0, 4.0])
    loss = product.sum()
    loss.backward()
    check("sum-of-matmul gradient", a.grad() == [1.0, 1.0, 1.0, 1.0])

    logits = textmtl.Tensor([0.0, 0.0], [1, 2], requires_grad=True)
    ce = logits.softmax().cross_entropy([0])
    check("uniform cross-entropy = ln 2", abs(ce.item() - math.log(2)) < 1e-6)
    ce.backward()
    grad = logits.grad()
    check(
        "cross-entropy gradient = p - onehot",
        all(abs(g - e) < 1e-6 for g, e in zip(grad, [-0.5, 0.5])),
    )

    probs = textmtl.Tensor([0.0, math.log(3.0)], [1, 2]).softmax().tolist()
    check("softmax 1:3 odds", abs(probs[0] - 0.25) < 1e-6 and abs(probs[1] - 0.75) < 1e-6)

    seeded = textmtl.Tensor.randn([4, 4], 0.02, seed=9)
    check("seeded randn reproduces", seeded.tolist() == textmtl.Tensor.randn([4, 4], 0.02, seed=9).tolist())


def text_smoke(textmtl):
    print("text:")
    check(
        "elongation collapses",
        textmtl.preprocess("yeeessss it is") == "yes it is",
        textmtl.preprocess("yeeessss it is"),
    )
    segmented = textmtl.preprocess("#notracism here", lexicon=["not", "racism", "here"])
    check("hashtag segmentation", segmented == "not racism here", segmented)
    check("short texts drop", textmtl.preprocess("hi") == "")

    vocab = textmtl.Vocabulary.build(["the cat sat", "the cat ran"], min_frequency=1)
    check("vocabulary size", len(vocab) == 8, f"len={len(vocab)}")
    ids, mask = vocab.encode("the cat sat", 6)
    check("encode pads to length", len(ids) == 6 and len(mask) == 6)
    check("attention mask marks padding", mask == [1, 1, 1, 1, 1, 0])


def metrics_smoke(textmtl):
    print("metrics:")
    result = textmtl.score_predictions(
        [0] * 60 + [1] * 40,
        [0] * 50 + [1] * 10 + [0] * 5 + [1] * 35,
        ["hate", "none"],
    )
    check("accuracy", abs(result["accuracy"] - 0.85) < 1e-12)
    check("macro F1", abs(result["f1_macro"] - 0.8465) < 5e-5, f"{result['f1_macro']:.4f}")
    check("confusion counts", result["confusion"] == [[50, 10], [5, 35]])
    check("per-class rows", [row["label"] for row in result["per_class"]] == ["hate", "none"])


def make_dataset(path, rows, labels, positive_words, negative_words, seed):
    rng = random.Random(seed)
    filler = ["the", "day", "was", "really", "so", "very", "quite", "show"]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["text", "label"])
        for i in range(rows):
            label = labels[i % len(labels)]
            cue = positive_words if label == labels[0] else negative_words
            words = [rng.choice(cue)] + rng.sample(filler, 3)
            rng.shuffle(words)
            writer.writerow([" ".join(words), label])


def pipeline_smoke(textmtl):
    print("pipeline:")
    work = pathlib.Path(tempfile.mkdtemp(prefix="textmtl-smoke-"))
    pos = ["great", "lovely", "wonderful", "happy", "nice"]
    neg = ["awful", "terrible", "sad", "angry", "bad"]
    make_dataset(work / "sentiment.csv", 60, ["positive", "negative"], pos, neg, 7)
    make_dataset(work / "emotion.csv", 60, ["joy", "anger"], pos, neg, 8)
    config = f"""
output_dir = "out"

[encoder]
d_model = 16
n_heads = 2
d_ff = 32
n_layers = 1
max_seq_len = 8
dropout = 0.0

[training]
mode = "mtl"
epochs = 25
batch_size = 8
learning_rate = 0.001
seed = 11

[[tasks]]
name = "sentiment"
role = "main"
label_names = ["positive", "negative"]
data = "sentiment.csv"

[[tasks]]
name = "emotion"
role = "auxiliary"
label_names = ["joy", "anger"]
data = "emotion.csv"
"""
    config_path = work / "run.toml"
    config_path.write_text(config)

    artifacts = textmtl.train(config_path)
    check("train writes checkpoint", pathlib.Path(artifacts["checkpoint"]).exists())
    check("train writes log", pathlib.Path(artifacts["train_log"]).exists())
    check("train reports both tasks", sorted(artifacts["reports"]) == ["emotion", "sentiment"])

    clf = textmtl.Classifier.load(artifacts["checkpoint"])
    check("checkpoint tasks", clf.tasks() == ["sentiment", "emotion"])
    check("task labels", clf.labels("sentiment") == ["positive", "negative"])
    predictions = clf.predict("sentiment", ["a wonderful lovely day", "x"])
    check("prediction is a known label", predictions[0] in ("positive", "negative"), predictions[0])
    check("too-short text rejected", predictions[1] is None)
    proba = clf.predict_proba("sentiment", ["a wonderful lovely day"])[0]
    check("probabilities sum to 1", abs(sum(proba) - 1.0) < 1e-5)

    out_dir = pathlib.Path(artifacts["output_dir"])
    result = textmtl.evaluate(
        artifacts["checkpoint"], out_dir / "sentiment.val.csv", "sentiment", output=work / "evalout"
    )
    trained_report = (out_dir / "sentiment.report.json").read_text()
    eval_report = pathlib.Path(result["report_json"]).read_text()
    check("eval reproduces training report", trained_report == eval_report)
    check("eval separates the toy task", result["f1_macro"] > 0.9, f"{result['f1_macro']:.4f}")

    stl_config = work / "run_stl.toml"
    stl_config.write_text(
        config.replace('mode = "mtl"', 'mode = "stl"').replace(
            'output_dir = "out"', 'output_dir = "out_stl"'
        )
    )
    stl = textmtl.train(stl_config)
    table = textmtl.compare(
        [stl["reports"]["sentiment"], artifacts["reports"]["sentiment"]],
        output=work / "cmpout",
    )
    check("comparison tabulates STL vs MTL", "STL" in table and "MTL" in table and "f1_macro" in table)

    try:
        textmtl.evaluate(artifacts["checkpoint"], out_dir / "sentiment.val.csv", "nosuch")
        check("unknown task raises", False)
    except ValueError as e:
        check("unknown task raises", "nosuch" in str(e), str(e))


def main():
    textmtl = build_and_import()
    tensor_smoke(textmtl)
    text_smoke(textmtl)
    metrics_smoke(textmtl)
    pipeline_smoke(textmtl)
    print("smoke test passed")


if __name__ == "__main__":
    main()
