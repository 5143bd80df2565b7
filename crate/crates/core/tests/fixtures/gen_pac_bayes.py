"""Writes pac_bayes.json: random bound inputs and their 50-digit evaluation."""

import json
import random

from mpmath import mp, mpf, log, sqrt

mp.dps = 50


def bound(max_loss, w_norm_sq, rho, k, n, delta):
    k, n = mpf(k), mpf(n)
    spread = 1 + sqrt(log(n) / k)
    complexity = k * log(1 + mpf(w_norm_sq) / mpf(rho) ** 2 * spread**2)
    confidence = 4 * log(n / mpf(delta))
    slack = 8 * log(6 * n + 3 * k)
    norm_term = sqrt((complexity + confidence + slack) / (n - 1))
    return norm_term, mpf(max_loss) + norm_term


def main():
    rng = random.Random(20201003)
    cases = []
    for _ in range(100):
        inputs = {
            "max_loss": rng.uniform(0.0, 3.0),
            "w_norm_sq": 10 ** rng.uniform(-4.0, 5.0),
            "rho": 10 ** rng.uniform(-3.0, 0.0),
            "k": rng.randint(1, 2_000_000),
            "n": rng.randint(2, 2_000_000),
            "delta": rng.uniform(1e-4, 0.5),
        }
        norm_term, total = bound(**inputs)
        cases.append({**inputs, "norm_term": float(norm_term), "total": float(total)})
    with open("pac_bayes.json", "w") as f:
        json.dump(cases, f, indent=1)
        f.write("\n")


if __name__ == "__main__":
    main()
