# %% [markdown]
# # How similar are two process tokens?
#
# A process step becomes a token by joining its attributes with "|".
# Tokens that share long runs of characters (same family, same recipe) get a
# high subsequence-kernel similarity; unrelated tokens get a low one.

# %%
from ptrca import KernelParams, kernel_matrix, normalized_kernel, subseq_kernel_p

tokens = [
    "LITH01|LITH_R02|LITH|PL1",
    "LITH02|LITH_R02|LITH|PL1",  # same recipe, sister tool
    "LITH01|LITH_R05|LITH|PL3",  # same tool, different recipe
    "CMP03|CMP_R01|CMP|PL3",     # different family
]

# %% Raw order-p kernels on a toy pair first.
for p in (1, 2, 3):
    print(f"K_{p}('cat', 'cart') = {subseq_kernel_p('cat', 'cart', p, 0.8):.4f}")

# %% Normalised similarities between the process tokens.
params = KernelParams()  # subsequences up to length 3, gap decay 0.8, equal weights
for t in tokens[1:]:
    print(f"{tokens[0]}  vs  {t}:  {normalized_kernel(tokens[0], t, params):.3f}")

# %% The full matrix is what the embedding step consumes.
K = kernel_matrix(tokens, params)
print(K.values.round(3))
