"""Compare continual-learning methods on one small stream: the full routed
agent against experience replay and plain fine-tuning.  Fine-tuning forgets
catastrophically; replay holds on; routing plus distillation holds on while
staying plastic on the new skill."""

import time

from skillstream.evaluate import gate_checks
from skillstream.harness import bench_run
from skillstream.training import RunConfig

config = RunConfig(base_skills=3, increments=(1,), train_episodes=6,
                   test_episodes=6, iters_base=250, iters_incr=120)

start = time.time()
comparison = bench_run(config, seeds=[0], methods=["ours", "er", "ft"],
                       out_dir="demo_bench")
print(f"three runs in {time.time() - start:.0f}s; table in demo_bench/")

print(f"\n{'method':>8} {'base':>6} {'novel':>6} {'all':>6} {'avg':>6} {'forget':>7}")
for method in ("ours", "er", "ft"):
    e = comparison["methods"][method]
    print(f"{method:>8} {e['base_mean']:6.1f} {e['novel_mean']:6.1f} "
          f"{e['all_mean']:6.1f} {e['avg_mean']:6.1f} {e['forget_mean']:7.1f}")

print()
for name, ok, detail in gate_checks(comparison):
    print(f"  {'PASS' if ok else 'FAIL'}  {name}  ({detail})")
