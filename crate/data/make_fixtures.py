"""Regenerate the CSV fixtures in this directory.

Eight schools uses the published scores. The other datasets are
synthetic stand-ins with the same columns and group structure as the
originals, drawn from the corresponding generative models.
"""

import csv
import pathlib

import numpy as np

HERE = pathlib.Path(__file__).resolve().parent


def write(name, header, rows):
    with open(HERE / name, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.6g}"


def eight_schools():
    y = [28, 8, -3, 7, -1, 1, 18, 12]
    sigma = [15, 10, 16, 11, 9, 11, 10, 18]
    write("eight_schools.csv", ["y", "sigma"], zip(y, sigma))


def conjugate(rng):
    theta = rng.normal(0, 1)
    mu = rng.normal(theta, 1)
    y = rng.normal(mu, 1, size=10)
    write("conjugate.csv", ["y"], ([v] for v in y))


def radon(rng, counties=12):
    uranium = rng.normal(0, 0.4, size=counties)
    mu, a, b, sigma = 1.4, 0.7, -0.65, 0.75
    m = rng.normal(mu + a * uranium, 1.0)
    sizes = rng.integers(2, 20, size=counties)
    rows = []
    for c in range(counties):
        for _ in range(sizes[c]):
            floor = int(rng.random() < 0.2)
            rows.append((c, floor, rng.normal(m[c] + b * floor, sigma), uranium[c]))
    write("radon.csv", ["county_idx", "floor", "log_radon", "uranium"], rows)


def german_credit(rng, n=200, d=8):
    x = rng.normal(size=(n, d)) * rng.uniform(0.5, 3.0, size=d) + rng.normal(size=d)
    xs = (x - x.mean(0)) / x.std(0)
    tau = np.exp(rng.normal(-0.5, 1.0, size=d))
    beta = rng.normal(0, tau)
    p = 1 / (1 + np.exp(-xs @ beta))
    y = (rng.random(n) < p).astype(int)
    header = ["label"] + [f"x{j}" for j in range(d)]
    write("german_credit.csv", header, ([y[i]] + list(x[i]) for i in range(n)))


def election(rng, states=10, per_state=30, d=3):
    beta = rng.normal(0, 1, size=d)
    alpha = rng.normal(-0.2, 0.6, size=states)
    rows = []
    for s in range(states):
        for _ in range(per_state):
            x = rng.normal(size=d)
            p = 1 / (1 + np.exp(-(alpha[s] + x @ beta)))
            rows.append([s, int(rng.random() < p)] + list(x))
    header = ["state_idx", "outcome"] + [f"x{j}" for j in range(d)]
    write("election.csv", header, rows)


def electric(rng, grades=4, pairs=96):
    mu = rng.normal(0, 1, size=grades)
    b = rng.normal(0.5, 0.3, size=grades)
    sigma = np.exp(rng.normal(-0.5, 0.3, size=grades))
    grade_of_pair = np.repeat(np.arange(grades), pairs // grades)
    a = rng.normal(mu[grade_of_pair], 1.0)
    rows = []
    for p in range(pairs):
        g = grade_of_pair[p]
        for treated in (0, 1):
            rows.append((p, g, treated, rng.normal(a[p] + b[g] * treated, sigma[g])))
    write("electric.csv", ["pair_idx", "grade_idx", "treated", "score"], rows)


if __name__ == "__main__":
    rng = np.random.default_rng(20190412)
    eight_schools()
    conjugate(rng)
    radon(rng)
    german_credit(rng)
    election(rng)
    electric(rng)
