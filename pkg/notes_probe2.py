"""Diagnose defect-spectrum quality: clean impurity oracle, star drift, profiles."""
import math
import time

import numpy as np

from merakit import exact, scaling
from merakit.bulk import optimize_bulk
from merakit.models import PAULI_Z, get_model, ising_bulk
from merakit.ttn import nrg_init, optimize_defect
from merakit.wilson import build_wilson

mera = optimize_bulk(ising_bulk(), chi=4, transitional=1, sweeps=2000,
                     flip=PAULI_Z, seed=1)
model = get_model("ising")
bsp = scaling.bulk_spectrum(mera)
print("bulk odd dims:", np.round(bsp.dims(parity=-1.0)[:2], 4))

# clean impurity: the defect tower must reproduce the bulk one-site tower
wi1 = build_wilson("impurity", mera=mera, model=model, alpha=1.0)
for (chit, mt, sw) in [(12, 4, 20), (12, 6, 40), (16, 4, 20)]:
    ttn = optimize_defect(wi1, chi_tilde=chit, sweeps=sw, m_tilde=mt)
    dsp = scaling.defect_spectrum(ttn)
    print(f"alpha=1 chit={chit} mt={mt} sw={sw}: odd {np.round(dsp.dims(parity=-1.0)[:2], 4)} "
          f"even {np.round(dsp.dims(parity=1.0)[:3], 4)}")

# how far does v_star move off its NRG seed?
wi = build_wilson("impurity", mera=mera, model=model, alpha=0.4)
for (chit, mt, sw) in [(12, 4, 20), (12, 6, 40)]:
    vs0, blocks0, pis0 = nrg_init(wi, chit, mt)
    ttn = optimize_defect(wi, chi_tilde=chit, sweeps=sw, m_tilde=mt)
    # nrg_init has no v_star; compare swept v_star to swept vs tensors instead
    dsp = scaling.defect_spectrum(ttn)
    vdiffs = [float(np.linalg.norm(a - b)) for a, b in zip(vs0, ttn.vs)]
    print(f"alpha=.4 chit={chit} mt={mt} sw={sw}: odd {np.round(dsp.dims(parity=-1.0)[:2], 4)} "
          f"v drift {np.round(vdiffs, 3)} Ehist tail {np.round(ttn.energy_history[-3:], 9)}")
    # spectrum of the *last explicit* tensor if square
    v_last = ttn.vs[-1]
    if v_last.shape[0] == v_last.shape[-1]:
        alt = scaling.defect_spectrum(v_last)
        print("   last-v spectrum head:", np.round(alt.dimensions[:5], 4))

# boundary free: where is the profile error largest, and the r=10..100 fit
wb = build_wilson("boundary", mera=mera, model=model, kind="free")
ttn = optimize_defect(wb, chi_tilde=8, sweeps=14, m_tilde=4)
sol = exact.free_fermion_ising(1200)
zm = scaling.expectation_profile(ttn, mera, PAULI_Z, 100)
zff = sol.z_profile()[:100]
rel = (zm[1:] - zff) / zff
print("free profile rel err by r:")
for r in (1, 2, 3, 4, 5, 7, 9, 12, 13, 14, 26, 27, 40, 41, 80, 100):
    print(f"   r={r}: {rel[r-1]:+.4f}")
e1, a1, res1 = scaling.fit_power_law(zm[10:], 2 / math.pi,
                                     rs=np.arange(10, 101, dtype=float))
print(f"mera fit r=10..100: exp {e1:.4f} res {res1:.4f}")
de = scaling.boundary_excess_energy(ttn, mera, window=100)
# window scan: is the residual in near bonds or far tail?
for w in (10, 30, 60, 100):
    dew = scaling.boundary_excess_energy(ttn, mera, window=w)
    print(f"   dE window {w}: {dew:.6f} (exact-window value {exact.boundary_energy('free', n=1200, window=w, sol=sol):.6f})")
# bond-level comparison near the cut
prof = scaling.SideProfile(ttn, mera, 0)
print("bond energies mera vs exact:")
for r in range(6):
    bm = prof.bond_energy(r)
    if r == 0:
        be = float(-sol.bond_xx(0) - 0.5 * (sol.z_profile()[0] + sol.z_profile()[1]))
    else:
        be = float(-sol.bond_xx(r) - 0.5 * (sol.z_profile()[r] + sol.z_profile()[r + 1]))
    print(f"   r={r}: mera {bm:.6f} ff {be:.6f} diff {bm-be:+.2e}")
print("site0 term: mera", ttn.defect_energy(), "ff", -0.5 * sol.z_profile()[0])
