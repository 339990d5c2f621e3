# %% [markdown]
# # Encoding trajectories and fitting the linear head
#
# Each wafer's history is folded into a running state
# z_k = z_{k-1} + log10(1 + wait hours) * x_token.  A sparse linear model on
# those states predicts defect density.  Every prefix of a trajectory is a
# training example with the wafer's final label.

# %%
from ptrca import DEFAULT_SCHEMA, SynthConfig, TrainConfig, build_dictionary, embed_tokens, generate_fab
from ptrca.kernel import kernel_matrix
from ptrca.regress import evaluate, fit
from ptrca.route2vec import encode_many

data = generate_fab(SynthConfig(n_wafers=300, route_length=(15, 30), recipes_per_family=3, seed=2))
dictionary = build_dictionary(data.trajectories, DEFAULT_SCHEMA)
emb = embed_tokens(kernel_matrix(dictionary), dim=24)

states = encode_many(data.trajectories, emb, DEFAULT_SCHEMA)
labels = [data.labels[s.wafer_id] for s in states]
print(f"wafer {states[0].wafer_id}: {states[0].length} steps, state dimension {emb.dim}")

# %% A simple split: first 240 wafers train, the rest test.
train_s, test_s = states[:240], states[240:]
train_y, test_y = labels[:240], labels[240:]

for nu in (0.0, 1e-3, 1e-2):
    res = fit(train_s, train_y, TrainConfig(nu=nu))
    m = evaluate(res.model, test_s, test_y)
    nnz = int((res.model.theta != 0).sum())
    print(f"nu={nu:<6} epochs={res.epochs:<5} nonzero={nnz:<3} test r={m.pearson_r:.3f} rmse={m.rmse:.3f}")
