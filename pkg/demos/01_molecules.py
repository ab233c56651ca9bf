#!/usr/bin/env python3
"""From SMILES to the two drug representations the models consume.

Run: python3 demos/01_molecules.py
"""

import numpy as np

from pairscore.batch import pack_graphs
from pairscore.dataset import featurize
from pairscore.molio import N_ATOM_FEATURES, morgan_fingerprint, morgan_identifiers, parse_smiles, permute_atoms

# A SMILES string parses into atoms and bonds; implicit hydrogens are filled in
# from default valences.
g = parse_smiles("CC(=O)Oc1ccccc1C(=O)O")  # aspirin
print(f"aspirin: {g.n_atoms} heavy atoms, {g.n_bonds} bonds")
print("hydrogens per atom:", [a.h_count for a in g.atoms])

# Fingerprint models see a 256-bit Morgan fingerprint, radius 2.
rec = featurize("CC(=O)Oc1ccccc1C(=O)O")
print(f"{len(morgan_identifiers(g))} distinct environments -> {rec.fingerprint.popcount} bits set of 256")

# Atom order does not matter: relabel the atoms, or write the SMILES from the
# other end, and the bits stay put.
shuffled = permute_atoms(g, np.random.default_rng(0).permutation(g.n_atoms))
print("relabeled atoms, same bits:", morgan_fingerprint(shuffled) == rec.fingerprint)
print("reversed SMILES, same bits:", featurize("OC(=O)c1ccccc1OC(C)=O").fingerprint == rec.fingerprint)

# Graph models see per-atom features, packed block-diagonally so several
# molecules pass through one sparse message-passing step.
mols = [featurize(s) for s in ("CCO", "c1ccccc1", "CC(=O)N")]
pg = pack_graphs([(m.graph, m.atom_features, m.bond_features) for m in mols])
print(f"packed {pg.n_graphs} graphs: {pg.n_nodes} nodes x {N_ATOM_FEATURES} features, offsets {pg.graph_offsets.tolist()}")
