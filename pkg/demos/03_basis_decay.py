"""
Localization of the multiscale basis
====================================

Each basis function is computed on an oversampled patch. Its distance
to the unlocalized (whole-domain) version falls off quickly with the
number of layers, even across high-contrast channels.
"""

from cemgms import build_auxiliary_space, build_global_basis, build_hierarchy, build_partition_of_unity, generate_default_medium
from cemgms.femops import assemble_stiffness
from cemgms.offline import energy_norm, local_cem_basis

g = build_hierarchy(10, 10, 10)
m = generate_default_medium(g)
pou = build_partition_of_unity(g)
aux = build_auxiliary_space(g, m, pou, 3)
A = assemble_stiffness(m, g.whole())

# coarse cell sitting on the channel crossing
i = 36
glob = build_global_basis(aux, g, m, i)

# %%
prev = None
for layers in range(1, 5):
    loc = local_cem_basis(aux, g, m, i, layers)
    err = max(energy_norm(A, glob[j].to_interior() - loc[j].to_interior()) for j in range(3))
    ratio = "" if prev is None else f"  ratio {err / prev:.3f}"
    print(f"layers={layers}  max energy distance {err:.3e}{ratio}")
    prev = err
