# %% [markdown]
# How much of the revision is unpredictable?
#
# In the control design one real participant plays each picture twice. The
# five other group members are synthetic, and in the second copy their
# judgments are shifted by the participant's own change of first answer.
# Whatever differs beyond that shift is intrinsic variability.

# %%
from influx import ControlSpec, estimate_unpredictability, generate_control_cohort
from influx.unpredictability import format_schedule, schedule_control_session

print(format_schedule(schedule_control_session(10, 10)))

# %%
pairs = generate_control_cohort(ControlSpec(n_pairs=500, lam=0.7, noise_std=5.0, seed=0))
est = estimate_unpredictability(pairs)
print(f"lambda* = {est.lambda_star:.3f}, std(eta) round 2 = {est.std_eta_round2:.2f}, round 3 = {est.std_eta_round3:.2f}")
print(f"{est.n_excluded} pairs excluded because the range clamped a shifted judgment")

# %% [markdown]
# The squared objective is a parabola in lambda, so the grid minimum sits
# next to the closed-form lambda*.

# %%
curve = est.lambda_curve
for lam, rms in curve[::10]:
    print(f"{lam:4.1f} {'#' * int(rms * 4)} {rms:.2f}")
