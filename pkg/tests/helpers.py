import random
from fractions import Fraction

from hypothesis import strategies as st

from dtcgame.core_model import GameConfig, TimeProfile


def small_config(num_users: int, grid_step=Fraction(1, 10), horizon=None) -> GameConfig:
    """Admissible toy config: m = mu = 1, beta = 1/2, gamma = 2."""
    if horizon is None:
        horizon = num_users
    return GameConfig(num_users=num_users, grid_step=grid_step, horizon=horizon)


@st.composite
def small_games(draw, max_users: int = 12):
    """(config, profile) with a random admissible toy config and distinct ticks."""
    P = draw(st.integers(1, max_users))
    step = draw(st.sampled_from([Fraction(1, 10), Fraction(1, 20)]))
    horizon = draw(st.sampled_from([P, P + 1, 2 * P]))
    cfg = small_config(P, step, horizon)
    H = cfg.horizon_ticks
    ticks = draw(st.lists(st.integers(-H, H), min_size=P, max_size=P, unique=True))
    return cfg, TimeProfile(tuple(ticks))


def random_game(rng: random.Random, max_users: int = 12):
    """Seeded counterpart of ``small_games``; half the profiles are packed into a short window."""
    P = rng.randint(1, max_users)
    cfg = small_config(P, rng.choice([Fraction(1, 10), Fraction(1, 20)]), rng.choice([P, P + 1, 2 * P]))
    H = cfg.horizon_ticks
    if rng.random() < 0.5:
        lo = rng.randint(-H, H - P + 1)
        hi = min(H, lo + rng.randint(P - 1, 30 * P))
        ticks = rng.sample(range(lo, hi + 1), P)
    else:
        ticks = rng.sample(range(-H, H + 1), P)
    return cfg, TimeProfile(tuple(ticks))
