"""Train a small joint model and a unary-only baseline, then compare them.

A short schedule so the script finishes in about a minute; the acceptance
suite uses a longer one.

Run: python3 demos/04_train_and_evaluate.py
"""
from jointpred.cli import format_table
from jointpred.evaluation import evaluate
from jointpred.scene import generate_dataset
from jointpred.training import TrainConfig, train

kinds = ["intersection", "merge", "queue"]
train_set = generate_dataset(kinds, 200, seed=1)
eval_set = generate_dataset(kinds, 60, seed=2)

joint = train(train_set, TrainConfig(steps=1500, graph="dynamic")).model
baseline = train(train_set, TrainConfig(steps=1500, graph="none")).model

reports = [
    evaluate(baseline, eval_set, label="unary only"),
    evaluate(baseline, eval_set, graph="dynamic", potential="heuristic", label="heuristic"),
    evaluate(joint, eval_set, label="joint"),
    evaluate(joint, eval_set, conditional=True, label="joint | AV"),
]
print(format_table(reports))
