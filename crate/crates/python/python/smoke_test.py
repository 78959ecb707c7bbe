"""Smoke test for the compiled extension.

Build with `cargo build --release -p trialforge-py --features extension-module`,
copy target/release/libtrialforge_py.so to trialforge_py.so on PYTHONPATH, then
run this script.
"""
import math

import trialforge_py as tf


def quadratic(trial):
    x = trial.suggest_float("x", -10.0, 10.0)
    lr = trial.suggest_float("lr", 1e-4, 1.0, log=True)
    layers = trial.suggest_int("layers", 1, 4)
    act = trial.suggest_categorical("act", ["relu", "tanh"])
    penalty = 0.0 if act == "relu" else 0.5
    return (x - 2.0) ** 2 + abs(math.log10(lr) + 2.0) + 0.1 * layers + penalty


def curve(trial):
    x = trial.suggest_float("x", 0.0, 1.0)
    value = 1.0
    for step in range(1, 17):
        value = x + 1.0 / step
        trial.report(value, step)
        if trial.should_prune(step):
            raise tf.TrialPruned()
    return value


def main():
    study = tf.Study.create(name="quad", sampler="tpe", seed=7)
    study.optimize(quadratic, 60)
    trials = study.trials()
    assert len(trials) == 60
    assert all(t["state"] == "complete" for t in trials)
    assert study.best_value < 2.0, study.best_value
    assert set(study.best_params) == {"x", "lr", "layers", "act"}

    again = tf.Study.create(name="quad", sampler="tpe", seed=7)
    again.optimize(quadratic, 60)
    assert [t["value"] for t in again.trials()] == [t["value"] for t in trials]

    pruned = tf.Study.create(name="curves", pruner="asha(r=1,eta=4,s=0)", seed=1)
    pruned.optimize(curve, 40)
    states = [t["state"] for t in pruned.trials()]
    assert "pruned" in states and "complete" in states

    manual = tf.Study.create(name="manual", direction="maximize")
    trial = manual.ask()
    y = trial.suggest_int("y", 0, 10, step=2)
    manual.tell(trial, float(y))
    assert manual.best_value == y

    try:
        tf.Study.create(name="bad", sampler="annealing")
    except ValueError:
        pass
    else:
        raise AssertionError("bad sampler accepted")

    u, p = tf.mann_whitney_u([1.0, 2.0, 3.0], [4.0, 5.0, 6.0])
    assert u == 9.0 and abs(p - 0.05) < 1e-12, (u, p)
    print("smoke test passed")


if __name__ == "__main__":
    main()
