# %% [markdown]
# Fitting influenceability and predicting the final round
#
# A synthetic cohort plays 30 games in groups of six. Each participant has a
# couple (alpha1, alpha2): how far they move toward the group mean after
# round 1 and after round 2. We recover the couples from the data, cluster
# them into typical couples and compare predictors by crossvalidation.

# %%
import numpy as np

from influx import (
    MixtureModel,
    PopulationSpec,
    crossvalidate,
    distance_to_mean_stats,
    filter_participants,
    fit_individual,
    fit_mixture,
    generate_population,
    success_summary,
)

mix = MixtureModel.from_components([[0.1, 0.05], [0.6, 0.4]], 0.05)
data, truth = generate_population(
    PopulationSpec(n_participants=100, n_games=30, noise_std=5, mixture=mix, initial_spread=15, seed=0)
)
print(f"{len(data.games)} games, {len(data.participants)} participants")

# %% [markdown]
# Screening: participants whose round-1 answers do not track the truth are
# removed. On an honest simulated cohort almost nobody goes.

# %%
data, screen = filter_participants(data)
print(f"kept {screen.n_kept}, removed {screen.n_removed}, threshold {screen.corr_threshold:.3f}")

# %% [markdown]
# Individual fits: one least-squares slope per round, through the origin.

# %%
fits = {p: fit_individual(data.full_games(p)) for p in data.participants}
err = np.array([np.abs(fits[p].as_array() - truth.couples[p].as_array()) for p in data.participants])
print("mean |alpha error| per round:", err.mean(axis=0).round(3))

model = fit_mixture([tuple(f) for f in fits.values()], 2, seed=0)
print("typical couples:\n", model.means.round(3))

# %% [markdown]
# Opinion diversity shrinks from round to round, and judgments get closer
# to the truth after the first social exposure.

# %%
stats = distance_to_mean_stats(data)
print({r: round(stats[r]["median"], 2) for r in (1, 2, 3)})
print({k: round(v, 3) for k, v in success_summary(data).items() if k.startswith("median")})

# %% [markdown]
# Crossvalidation: the null model predicts no change. One typical couple
# needs no data about the participant; individual fits need a few games.

# %%
rep = crossvalidate(data, ["null", "individual_alpha", "typical_1", "typical_2"], [1, 2, 3, 5, 10, 15], iterations=100)
for m in ("null", "individual_alpha", "typical_1", "typical_2"):
    print(f"{m:>17}", rep.series(m).round(2))
