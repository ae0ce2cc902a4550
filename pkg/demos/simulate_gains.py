"""Estimate how much calibration lowers error on synthetic data.

Run with ``python demos/simulate_gains.py``.  Finishes in a few seconds.
"""
from isomech.experiments import ExperimentConfig, best_level, run_iclr_style, run_tree_tradeoff


def main():
    cfg = ExperimentConfig(graph_source={"generator": "conference", "n": 1500, "m": 3000},
                           noise_sigma=2.0, trials=5, metrics=("mse", "accept@30"))
    rep = run_iclr_style(cfg)
    print("conference-style run")
    print(f"  mse baseline {rep.mse_per_method['baseline']:.3f}  partition {rep.mse_per_method['partition']:.3f}")
    print(f"  relative change {rep.pct_change_vs_baseline['partition']:+.3f}")
    for method, acc in rep.accept_accuracy_at_k.items():
        print(f"  {method:9s} accept@30 {acc['30']:.3f}")

    print("tree: strongness level with lowest mse as perception noise grows")
    variances = [0.0, 0.1, 0.5, 2.0]
    tree = run_tree_tradeoff(depth=5, sigma_list=[2.0], variance_list=variances, trials=10)
    for var in variances:
        print(f"  perception variance {var:4.1f}: best L = {best_level(tree, 2.0, var)}")


if __name__ == "__main__":
    main()
