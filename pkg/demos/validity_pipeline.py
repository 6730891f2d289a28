# # Checking generated molecules
#
# Samples from a flow are point clouds. Before they can be weighted each
# one has to be recognised as the intended molecule: bonds are perceived
# from covalent radii, the bond graph is matched to the reference
# topology (which also recovers the atom order), and every chiral centre
# is checked. Samples whose centres are all inverted are mirrored back.

# %%
import numpy as np

from tbg.molkit import check_chirality, match_topology, mirror, perceive_bonds, validate_samples
from tbg.targets import McmcConfig, dipeptide_target, reference_sampler

target = dipeptide_target(("ALA", "SER"))
top = target.topology
print(top.name, top.n_atoms, "atoms,", len(top.bonds), "bonds,", len(top.chiral_centers), "chiral centres")
x = reference_sampler(target, 50, 0, McmcConfig(n_chains=10, burn_in=1000, thin=10))
print("reference frames", validate_samples(x, top).counts())

# ## Shuffled atoms are matched back

# %%
frame = x[0]
perm = np.random.default_rng(1).permutation(top.n_atoms)
shuffled = frame[perm]
m = match_topology(perceive_bonds(shuffled, [top.elements[i] for i in perm]), top)
restored = shuffled[m.permutation]
print("match", m.verdict, "| energy before", round(float(target.energy(frame)), 6),
      "after", round(float(target.energy(restored)), 6))

# ## Mirror images and broken geometry

# %%
print("mirror image:", check_chirality(mirror(frame), top.chiral_centers).classification)
broken = frame.copy()
broken[0] += 0.1  # pull N1 off its CA
batch = np.stack([frame, mirror(frame), broken])
v = validate_samples(batch, top)
for label, status, flipped in zip(["original", "mirrored", "stretched bond"], v.status, v.mirrored):
    print(f"{label:15s} -> {status}" + (" (repaired by mirroring)" if flipped else ""))
