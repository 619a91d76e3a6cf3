"""Empirical false-alarm rate of a per-outcome 3-sigma check on sampled counts.

For each circuit seed, draws n_shots from the exact QT-ansatz distribution and
counts outcomes whose frequency falls outside p +- 3*sqrt(p(1-p)/n). Under an
exact sampler the expected fraction is about 0.27% for well-populated outcomes
and larger when n*p << 1, where a single observed count already exceeds 3 sigma.
"""
import argparse

import numpy as np

from qtrain import quantum as q


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--circuits", type=int, default=40)
    ap.add_argument("--qubits", type=int, default=6)
    ap.add_argument("--blocks", type=int, default=2)
    ap.add_argument("--shots", type=int, default=10 ** 6)
    args = ap.parse_args(argv)

    n, nb = args.qubits, args.blocks
    bad = total = circuits_failing = 0
    for seed in range(args.circuits):
        rng = np.random.default_rng(seed)
        p = q.run_qt_ansatz(q.QtAnsatz(n, nb, rng.uniform(-np.pi, np.pi, n * nb)))
        freq = q.sample_counts(p, args.shots, seed) / args.shots
        sigma = np.sqrt(p * (1 - p) / args.shots)
        viol = np.abs(freq - p) > 3 * sigma
        bad += int(viol.sum())
        total += p.size
        circuits_failing += bool(viol.any())
        if viol.any():
            i = int(np.argmax(np.where(viol, np.abs(freq - p) / sigma, 0)))
            print(f"seed {seed}: {int(viol.sum())} outcome(s) outside 3 sigma, worst p={p[i]:.3g} "
                  f"n*p={args.shots * p[i]:.3g}")
    print(f"violation fraction {bad / total:.4%} over {total} outcomes; "
          f"{circuits_failing}/{args.circuits} circuits have at least one")


if __name__ == "__main__":
    main()
