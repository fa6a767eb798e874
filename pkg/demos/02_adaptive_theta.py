"""
Adaptive enrichment and the role of theta
=========================================

Only the vertices carrying most of the residual get an online basis.
A theta close to 1 adds a handful of functions per step and the error
falls slowly; theta near 0 picks almost every vertex.
"""

import numpy as np

from cemgms import OfflineModel, SourceTerm, build_hierarchy, convergence_rate, generate_default_medium, select_regions

g = build_hierarchy(10, 10, 20)
offline = OfflineModel(g, generate_default_medium(g), num_aux=3, layers=2)

# %%
for theta in (0.95, 0.1):
    state = offline.problem(SourceTerm("f2")).enrich(theta=theta, max_iters=3)
    dofs = [r.dof for r in state.history]
    errs = [r.energy_error_pct for r in state.history]
    print(f"theta={theta}: dof {dofs}")
    print("   energy %:", np.array2string(np.array(errs), precision=4))
    print("   observed rate:", round(convergence_rate(state.history), 4))

# %%
# what the selection sees: sorted indicators and how many survive
delta = state.indicator_history[0].delta
print("largest indicators:", np.sort(delta)[::-1][:5])
print("regions chosen at theta=0.5:", len(select_regions(delta, 0.5)))
