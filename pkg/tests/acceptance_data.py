"""Campaigns shared by the acceptance suite and the slower campaign tests.

Seeds were fixed before any result was inspected: 2024 for the peer
simulations, 11 for the urn models.
"""

from functools import lru_cache

from flashcrowd.campaign import Plan, fit_all, run_campaign

PEER_SEED = 2024
URN_SEED = 11
PEER_GRID = (10 ** 3, 10 ** 4, 10 ** 5, 10 ** 6)
PEER_REPS = 500


@lru_cache(maxsize=None)
def peer_campaigns():
    """``{policy: (estimates, fits, samples)}`` for both routing policies at rho=2."""
    out = {}
    for policy in ("min", "random"):
        plan = Plan(f"peersim-{policy}", PEER_GRID, PEER_REPS, master_seed=PEER_SEED, rho=2.0)
        samples = {}
        estimates = run_campaign(plan, samples=samples)
        out[policy] = (estimates, fit_all(estimates), samples)
    return out


def fit_of(fits, statistic):
    return next(f for f in fits if f.statistic == statistic)
