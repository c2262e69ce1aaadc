"""Train both fusion models on a small corridor dataset, then evaluate, ablate and time them.

Takes well under a minute on one core.  The dataset here is smaller than the
acceptance run, so expect lower scores.
"""
import tempfile

from fusionsteer import dataset, evaluate
from fusionsteer.models import PROFILES, build_model, count_parameters
from fusionsteer.tensor import make_rng
from fusionsteer.train import train

tmp = tempfile.TemporaryDirectory()
manifest = dataset.generate_dataset(make_rng(1), 200, tmp.name)
stats = dataset.read_norm_stats(f"{tmp.name}/norm.csv")
splits = {s: dataset.load_split(manifest, s, stats, image_size=48) for s in dataset.SPLITS}

for kind in ("conemb", "gated"):
    config = PROFILES[f"tiny-{kind}"]
    rng = make_rng(7)
    model = build_model(config, rng)
    print(f"\n{config.profile}: {count_parameters(model):,} parameters")

    def show(row):
        if row.epoch % 5 == 0:
            gates = "" if row.w_rgb_mean is None else f"  gates rgb {row.w_rgb_mean:+.3f} depth {row.w_depth_mean:+.3f}"
            print(f"  epoch {row.epoch:2d}  train {row.train_loss:.5f}  val {row.val_loss:.5f}{gates}")

    train(model, splits["train"], splits["val"], 20, rng, lr=1e-3, log_sink=show)

    reports = evaluate.ablate(model, splits["test"], name=config.profile)
    print(evaluate.format_table(reports))
    print(evaluate.ablation_observation(reports))

    t = evaluate.bench_inference(model, iters=20)
    print(f"  {t.ms_per_inference_mean:.3f} ms per inference, {t.flops_per_sample:,} FLOPs")

tmp.cleanup()
