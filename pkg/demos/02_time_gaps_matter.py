"""Train the recommender on a log where elapsed time decides the next item.

In the synthetic log every user browses one category at a time.  After a gap
longer than a day the user moves on to the next category, after a short gap
they stay.  Item ids alone cannot tell the two regimes apart; timestamps can.
This demo trains the full model and its time-blind ablation side by side.

Run:  python3 demos/02_time_gaps_matter.py        (about three minutes)
"""

from timessd import data, synthetic
from timessd.model import ModelConfig, TimeAwareSSDRec
from timessd.trainer import TINY, TrainConfig, evaluate, train

ds = data.build_sequences(synthetic.generate(synthetic.TimeGapSpec(), seed=0))
print("dataset:", {k: v for k, v in ds.stats().items() if k in ("users", "items", "interactions", "avg_length")})

for no_time in (False, True):
    cfg = ModelConfig(**{**TINY, "n_items": ds.n_items, "max_len": 30, "chunk": 8, "no_time": no_time})
    model = TimeAwareSSDRec(cfg, seed=0)
    res = train(model, ds, TrainConfig(lr=0.01, batch=128, epochs=12, patience=5, seed=0))
    rep = evaluate(model, ds, "test")
    name = "time-blind" if no_time else "time-aware"
    losses = " ".join(f"{h[1]:.2f}" for h in res.history)
    print(f"\n{name}: initial loss {res.initial_loss:.2f}, epoch losses {losses}")
    print(rep.table())
