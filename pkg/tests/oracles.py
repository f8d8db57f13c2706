"""Independent reference implementations used only by the tests."""

from __future__ import annotations

import itertools

from scipy import stats


def best_match_simulation(iou, thr):
    """Per-prediction best matching with highest-IoU conflict resolution.

    Every free prediction claims its best remaining truth (IoU >= thr).  A truth
    claimed by several predictions keeps the one with the highest IoU; the
    others are turned away from that truth and claim again next round.  Ties
    prefer the lower index on either side.  Returns {(t, p)}.
    """
    n_t, n_p = len(iou), len(iou[0]) if len(iou) else 0
    rejected = [set() for _ in range(n_p)]
    held = {}  # truth -> pred
    free = list(range(n_p))
    while free:
        claims = {}
        still_free = []
        for p in free:
            options = [t for t in range(n_t) if iou[t][p] >= thr and t not in rejected[p]]
            if not options:
                continue  # false positive for good
            best = max(options, key=lambda t: (iou[t][p], -t))
            claims.setdefault(best, []).append(p)
        for t, ps in claims.items():
            contenders = ps + ([held[t]] if t in held else [])
            winner = max(contenders, key=lambda p: (iou[t][p], -p))
            for p in contenders:
                if p != winner:
                    rejected[p].add(t)
                    still_free.append(p)
            held[t] = winner
        free = sorted(set(still_free))
    return {(t, p) for t, p in held.items()}


def exhaustive_stable_matchings(iou, thr):
    """All one-to-one matchings over edges >= thr that admit no blocking pair.

    Rank of an edge: higher IoU first, then lower truth, then lower prediction
    index.  Exponential; only for a handful of nodes.
    """
    n_t, n_p = len(iou), len(iou[0]) if len(iou) else 0
    edges = [(t, p) for t in range(n_t) for p in range(n_p) if iou[t][p] >= thr]

    def better(e, f):
        return (-iou[e[0]][e[1]], e[0], e[1]) < (-iou[f[0]][f[1]], f[0], f[1])

    found = []
    for k in range(min(n_t, n_p) + 1):
        for combo in itertools.combinations(edges, k):
            ts = [t for t, _ in combo]
            ps = [p for _, p in combo]
            if len(set(ts)) < k or len(set(ps)) < k:
                continue
            t_of = {p: (t, p) for t, p in combo}
            p_of = {t: (t, p) for t, p in combo}
            blocking = False
            for e in edges:
                if e in combo:
                    continue
                t, p = e
                t_ok = t not in p_of or better(e, p_of[t])
                p_ok = p not in t_of or better(e, t_of[p])
                if t_ok and p_ok:
                    blocking = True
                    break
            if not blocking:
                found.append(set(combo))
    return found


def binomial_interval_99(n, p):
    """Central 99% interval of Binomial(n, p) as counts."""
    lo, hi = stats.binom.interval(0.99, n, p)
    return int(lo), int(hi)
