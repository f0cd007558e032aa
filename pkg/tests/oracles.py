"""Independent brute-force oracles used by the learner and acceptance tests.

These unroll definitions directly with plain loops and stay deliberately
ignorant of the implementation they check.
"""

import numpy as np


def reward_oracle(score_our, score_enemy, timedecay, reward_decay=0.999):
    top = max(score_our, score_enemy)
    if top == 0:
        return 0.0
    return reward_decay**timedecay * (score_our - score_enemy) / top


def unrolled_targets(q_online, q_target, valid_len, terminal, reward, lam, n):
    """Direct enumeration of the n-step double-Q target definition.

    For each step: if the episode terminal T (the last valid step of a
    terminal slice) is within n steps ahead or is the step itself, the target
    is lam^(T-t) * reward. Otherwise bootstrap lam^n * q_target[t+n, a*] with
    a* the online argmax at t+n, provided t+n stays inside the valid steps;
    anything else is masked.
    """
    length = len(q_online)
    targets = np.zeros(length)
    mask = np.zeros(length, dtype=bool)
    last = valid_len - 1
    for t in range(valid_len):
        if terminal and t + n >= last:
            targets[t] = lam ** (last - t) * reward
            mask[t] = True
        elif t + n <= last:
            row = q_online[t + n]
            best, best_value = 0, row[0]
            for a in range(1, len(row)):
                if row[a] > best_value:
                    best, best_value = a, row[a]
            targets[t] = lam**n * q_target[t + n, best]
            mask[t] = True
    return targets, mask


def random_target_instance(rng, n_actions=3, max_len=6):
    length = int(rng.integers(1, max_len + 1))
    q_online = rng.standard_normal((length, n_actions))
    q_target = rng.standard_normal((length, n_actions))
    terminal = bool(rng.random() < 0.5)
    reward = float(rng.uniform(-1.0, 1.0)) if terminal else None
    lam = float(rng.uniform(0.9, 0.9999))
    n = int(rng.integers(1, 5))
    return q_online, q_target, length, terminal, reward, lam, n
