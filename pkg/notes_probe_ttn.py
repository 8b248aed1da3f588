"""How do dE, profiles, and defect dims respond to chi_tilde / m_tilde / sweeps?"""
import math
import time

import numpy as np

from merakit import exact, scaling
from merakit.bulk import optimize_bulk
from merakit.models import PAULI_Z, get_model, ising_bulk
from merakit.ttn import optimize_defect
from merakit.wilson import build_wilson

mera = optimize_bulk(ising_bulk(), chi=4, transitional=1, sweeps=2000,
                     flip=PAULI_Z, seed=1)
model = get_model("ising")
print("bulk ready, e err", mera.energy_per_site + 4 / math.pi)

sol_free = exact.free_fermion_ising(1200)
sol_fixed = exact.free_fermion_ising(1200, left="fixed-up")

wb = build_wilson("boundary", mera=mera, model=model, kind="free")
wf = build_wilson("boundary", mera=mera, model=model, kind="fixed-up")
wi = build_wilson("impurity", mera=mera, model=model, alpha=0.4)

for (chit, mt, sw) in [(8, 4, 14), (8, 6, 30), (12, 6, 30), (12, 8, 40), (16, 8, 40)]:
    t0 = time.time()
    ttn = optimize_defect(wb, chi_tilde=chit, sweeps=sw, m_tilde=mt)
    de = scaling.boundary_excess_energy(ttn, mera, window=100)
    zm = scaling.expectation_profile(ttn, mera, PAULI_Z, 30)
    rel = np.abs(zm[1:] - sol_free.z_profile()[:30]) / sol_free.z_profile()[:30]
    dsp = scaling.defect_spectrum(ttn)
    odd = dsp.dims(parity=-1.0)[:2]
    print(f"free chit={chit} mt={mt} sw={sw}: dE err {de-0.18169011:+.4f} "
          f"prof max {rel.max():.4f} mean {rel.mean():.4f} odd {np.round(odd,4)} "
          f"({time.time()-t0:.1f}s)")

for (chit, mt, sw) in [(8, 4, 14), (12, 8, 40)]:
    ttn = optimize_defect(wf, chi_tilde=chit, sweeps=sw, m_tilde=mt)
    de = scaling.boundary_excess_energy(ttn, mera, window=100)
    zm = scaling.expectation_profile(ttn, mera, PAULI_Z, 30)
    rel = np.abs(zm[1:] - sol_fixed.z_profile()[:30]) / np.abs(sol_fixed.z_profile()[:30])
    dsp = scaling.defect_spectrum(ttn)
    print(f"fixed chit={chit} mt={mt} sw={sw}: dE err {de+0.45492966:+.4f} "
          f"prof max {rel.max():.4f} mean {rel.mean():.4f} "
          f"dims {np.round(dsp.dimensions[1:5], 3)}")

pred = scaling.predicted_defect_dims(0.4)
for (chit, mt, sw) in [(12, 4, 20), (12, 6, 40), (16, 6, 40), (16, 8, 60)]:
    t0 = time.time()
    ttn = optimize_defect(wi, chi_tilde=chit, sweeps=sw, m_tilde=mt)
    dsp = scaling.defect_spectrum(ttn)
    odd = dsp.dims(parity=-1.0)[:2]
    rel = [abs(o / p - 1) for o, p in zip(odd, pred)]
    print(f"imp04 chit={chit} mt={mt} sw={sw}: odd {np.round(odd,4)} "
          f"rel {np.round(rel,3)} E={ttn.energy:.8f} ({time.time()-t0:.1f}s)")

# exact-profile exponent fits over candidate windows
r = np.arange(1, 201, dtype=float)
zex = (2 / math.pi) * (1 + 1 / (4 * r + 3))
for lo, hi in [(1, 30), (5, 40), (10, 100), (30, 200)]:
    e, a, res = scaling.fit_power_law(zex[lo - 1:hi], 2 / math.pi, rs=r[lo - 1:hi])
    print(f"exact free fit r={lo}..{hi}: exp {e:.4f} amp {a:.4f} res {res:.4f}")
