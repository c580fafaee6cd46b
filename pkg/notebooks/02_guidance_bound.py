# %% [markdown]
# # The guidance function and its error bound
#
# The guidance function maps the history's archetype coefficients to predicted
# horizon coefficients and lifts them back to frames. Its error can never be
# smaller than the part of the horizon the archetypes cannot represent, minus
# the predictor's own error in coefficient space.

# %%
import numpy as np

from pgdm.archetypal import fit_archetypes
from pgdm.data import SyntheticSpec, generate, sliding_windows, split
from pgdm.guidance import PredictorConfig, guide, train_pattern_predictor, window_errors

ds = generate(SyntheticSpec(d=4, p_true=3, n_sequences=120, sequence_length=16,
                            ood_fraction=0.25), seed=1)
wins = split(sliding_windows(ds.sequences, 3, 4, ids=ds.ids), seed=1)
frames = np.stack([w.history[-1] for w in wins["train"]])
A = fit_archetypes(frames[:400], 3, seed=0)

fA = train_pattern_predictor(wins["train"], A, PredictorConfig(max_epochs=60),
                                   val_windows=wins["val"])
print("epochs run:", len(fA.history), " final train KL:", round(fA.history[-1]["train_kl"], 5))

# %%
w = wins["test"][0]
g = guide(fA, A, w.history)
print("predicted coefficients (H, p):")
print(np.round(g.predicted_coeffs, 3))
print("predicted horizon (H, d):")
print(np.round(g.predicted_pattern.T, 3))
print("true horizon:")
print(np.round(w.horizon, 3))

# %% [markdown]
# ## Checking the bound on every test window

# %%
e = window_errors(fA, A, wins["test"])
margin = e.L_fG - (e.L_cA_horizon - e.L_fA)
print(f"{len(margin)} windows, min margin {margin.min():.2e}, bound holds:",
      bool(np.all(margin >= -1e-9)))

# %% [markdown]
# ## AAUQ as a proxy
# High history uncertainty tends to come with high guidance error, which is
# what lets the dynamic scale back off on unfamiliar inputs.

# %%
r = np.corrcoef(e.u_history, e.L_fG)[0, 1]
print(f"Pearson(AAUQ, guidance error) = {r:.3f}")
for q in (0.25, 0.5, 0.75, 1.0):
    cut = np.quantile(e.u_history, q)
    sel = e.u_history <= cut
    print(f"u <= {cut:.3f}: mean guidance error {e.L_fG[sel].mean():.4f}")
