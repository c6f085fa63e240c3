"""A full reference run next to its dense baseline.

Run: python demos/04_end_to_end.py   (about 10 s)
"""
from fedprune import RunConfig, run_experiment

base = RunConfig(seed=0)
for s in (0.0, 0.5):
    result = run_experiment(base.replace(target_sparsity=s))
    print(f"\nS={s}")
    for rec in result.records:
        if rec.round % 50 == 0 or rec.round == len(result.records) - 1:
            print(
                f"  round {rec.round:3d} {rec.phase.value:<11} acc {rec.eval_accuracy:.4f} "
                f"zero-ratio {rec.zero_param_ratio:.3f} bytes/client {rec.bytes_down}"
            )
    print("  final model params:", result.final.param_count)
