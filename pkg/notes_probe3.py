"""Probe: does chi_mid (Wilson chain bond dim) fix dE, profiles, and defect spectra?"""
import time

import numpy as np

from merakit.bulk import optimize_bulk
from merakit.exact import free_fermion_ising
from merakit.models import PAULI_Z, get_model, ising_bulk
from merakit.scaling import (
    SideProfile, boundary_excess_energy, defect_spectrum, expectation_profile,
)
from merakit.ttn import optimize_defect
from merakit.wilson import build_wilson

t0 = time.time()


def stamp(msg):
    print(f"[{time.time() - t0:7.1f}s] {msg}", flush=True)


mera = optimize_bulk(ising_bulk(), chi=4, transitional=1, sweeps=2000,
                     flip=PAULI_Z, seed=1)
stamp(f"bulk ready e={mera.energy_per_site:.8f}")
model = get_model("ising")

ff = free_fermion_ising(1200, left="free")
zff = ff.z_profile()


def ff_bond(r):
    return -ff.bond_xx(r) - 0.5 * (zff[r] + zff[r + 1])


dE_exact = 0.18169011  # 1/2 - 1/pi

print("=== A: boundary free, chi_mid scan (chi_tilde=8, m=4, sw=14) ===", flush=True)
for cm in (4, 8, 16):
    wb = build_wilson("boundary", mera=mera, model=model, kind="free",
                      chi_mid=cm)
    ttn = optimize_defect(wb, chi_tilde=8, sweeps=14, m_tilde=4)
    dE = boundary_excess_energy(ttn, mera, window=100)
    sp = SideProfile(ttn, mera)
    prof = expectation_profile(ttn, mera, PAULI_Z, 9)
    rel = (prof[1:] - zff[:9]) / zff[:9]
    spec = defect_spectrum(ttn, count=8)
    odd = spec.dims(parity=-1.0, count=2)
    stamp(f"cm={cm:2d} dE={dE:+.6f} (err {dE - dE_exact:+.2e}) "
          f"bond diffs 1..3: "
          + " ".join(f"{sp.bond_energy(r) - ff_bond(r):+.1e}" for r in (1, 2, 3)))
    stamp(f"      profile rel err r=1..9: "
          + " ".join(f"{v:+.4f}" for v in rel))
    stamp(f"      odd dims {np.round(odd, 4)} (want [0.5, ~1.5])  "
          f"e={ttn.energy:.8f}")

print("=== B: impurity alpha=1 (clean), chi_tilde=12, m=4 ===", flush=True)
for cm, sweeps in ((4, 40), (16, 20), (16, 60), (16, 150)):
    wi = build_wilson("impurity", mera=mera, model=model, alpha=1.0,
                      chi_mid=cm)
    ttn = optimize_defect(wi, chi_tilde=12, sweeps=sweeps, m_tilde=4)
    spec = defect_spectrum(ttn, count=10)
    odd = spec.dims(parity=-1.0, count=2)
    ev = spec.dims(parity=1.0, count=3)
    dh = ttn.energy_history
    stamp(f"cm={cm:2d} sw={sweeps:3d} odd={np.round(odd, 4)} "
          f"(want [0.125, 1.125]) even={np.round(ev, 4)} "
          f"e={ttn.energy:.8f} tail dE/sw={dh[-1] - dh[-2]:+.1e}")
