"""Measure every scaling.py quantity on the chi=4 fixtures to freeze test tolerances."""
import math
import time

import numpy as np

from merakit import exact, scaling
from merakit.bulk import optimize_bulk
from merakit.models import PAULI_X, PAULI_Z, get_model, ising_bulk
from merakit.ttn import optimize_defect
from merakit.wilson import build_wilson

t0 = time.time()
mera = optimize_bulk(ising_bulk(), chi=4, transitional=1, sweeps=2000,
                     flip=PAULI_Z, seed=1)
print(f"bulk done {time.time()-t0:.1f}s e={mera.energy_per_site:.8f} vs {-4/math.pi:.8f}")

sp = scaling.bulk_spectrum(mera)
print("lam0", sp.values[0], "op0 vs I:", np.abs(sp.operators[0] - np.eye(4)).max())
print("dims:", np.round(sp.dimensions[:8], 5))
print("pars:", sp.parities[:8])
odd = sp.dims(parity=-1.0)
even = sp.dims(parity=1.0)
print("odd dims:", np.round(odd[:4], 5), " even dims:", np.round(even[:4], 5))

# two-point telescoping + identity
for q in range(3):
    print("tp I,I q=", q, scaling.two_point(mera, 0, 0, q, spectrum=sp))
i_sig = int(np.argmax(sp.parities == -1.0))
v1 = scaling.two_point(mera, i_sig, i_sig, 1, spectrum=sp)
v2 = scaling.two_point(mera, i_sig, i_sig, 2, spectrum=sp)
print("sigma idx", i_sig, "ratio", v2 / v1, "lam^2", (sp.values[i_sig] ** 2).real)

# site correlator vs Toeplitz
eye = np.eye(2)
for q in (1, 2, 3, 4):
    got = scaling.site_correlator(mera, PAULI_X, PAULI_X, q)
    want = exact.ising_xx_correlator(3 ** q)
    gid = scaling.site_correlator(mera, eye, eye, q)
    print(f"q={q} XX got {got:.6f} want {want:.6f} rel {abs(got/want-1):.4f} id {gid:.2e}")
xs = [scaling.site_correlator(mera, PAULI_X, PAULI_X, q) for q in (1, 2, 3, 4)]
expn, amp, res = scaling.fit_power_law(xs, 0.0, rs=[3.0 ** q for q in (1, 2, 3, 4)])
print("XX exponent", expn, "amp", amp, "res", res)

model = get_model("ising")
for kind in ("free", "fixed-up"):
    t1 = time.time()
    wh = build_wilson("boundary", mera=mera, model=model, kind=kind)
    ttn = optimize_defect(wh, chi_tilde=8, sweeps=14, m_tilde=4)
    print(f"--- boundary {kind}: s0={wh.s0} m~={ttn.m_tilde} E={ttn.energy:.6f} "
          f"bracket={ttn.energy_bracket:.2e} {time.time()-t1:.1f}s")
    prof = scaling.SideProfile(ttn, mera, 0)
    # sigma sanity
    for s in range(0, ttn.m_tilde + 2):
        sig = prof.sigma(s)
        tr = float(np.einsum("abcabc->", sig))
        marg = np.einsum("abcdbc->ad", sig)
        ref = ttn.densities()[s] if s < ttn.m_tilde else ttn.rho_star
        print(f"  s={s} tr-1={tr-1:+.2e} marg dev={np.abs(marg-ref).max():.2e}")
    # site identities
    devs = [abs(prof.site_value(r, eye) - 1.0) for r in (0, 1, 2, 3, 4, 7, 9, 13, 40, 100)]
    print("  site id dev max:", max(devs))
    # shells
    b0 = prof.bond_energy(0)
    print("  bond0 vs shell1:", b0 - ttn.shell_energy(1))
    s2 = sum(prof.bond_energy(r) for r in (1, 2, 3))
    print("  bonds123 vs shell2:", s2 - ttn.shell_energy(2))
    if wh.s0 >= 3 and ttn.m_tilde >= 3:
        s3 = sum(prof.bond_energy(r) for r in range(4, 13))
        print("  bonds4..12 vs shell3:", s3 - ttn.shell_energy(3))
    else:
        print("  (s0 too small for shell 3)")
    # excess energy
    de = scaling.boundary_excess_energy(ttn, mera, window=100)
    want = 0.5 - 1 / math.pi if kind == "free" else 0.5 - 3 / math.pi
    print(f"  dE={de:.6f} want {want:.6f} diff {de-want:+.2e}")
    # profile vs free fermion
    sol = exact.free_fermion_ising(1200, left=kind)
    zff = sol.z_profile()
    zm = scaling.expectation_profile(ttn, mera, PAULI_Z, 30)
    rel = np.abs(zm[1:] - zff[:30]) / np.abs(zff[:30])
    print(f"  z profile rel err r=1..30: max {rel.max():.4f} mean {rel.mean():.4f}")
    print(f"  z(0): mera {zm[0]:.4f} ff {zff[0] if kind=='free' else 'n/a; mera site0 is the pinned one'}")
    if kind == "fixed-up":
        # mera site 0 carries the boundary field; ff profile starts at the
        # first dynamical site — compare shifted
        rel0 = abs(zm[1] - zff[0]) / abs(zff[0])
        print(f"  fixed z(1) vs ff z(0): rel {rel0:.4f}")
    expn, amp, res = scaling.fit_power_law(zm[1:], 2 / math.pi,
                                           rs=np.arange(1, 31, dtype=float))
    print(f"  profile exponent {expn:.4f} amp {amp:.4f} res {res:.4f}")
    dsp = scaling.defect_spectrum(ttn)
    print("  defect lam0", dsp.values[0], "pars0", None if dsp.parities is None else dsp.parities[0])
    print("  defect dims:", np.round(dsp.dimensions[1:7], 4))
    if dsp.parities is not None:
        print("  defect odd:", np.round(dsp.dims(parity=-1.0)[:3], 4),
              " even:", np.round(dsp.dims(parity=1.0)[:4], 4))

t1 = time.time()
wh = build_wilson("impurity", mera=mera, model=model, alpha=0.4)
ttn = optimize_defect(wh, chi_tilde=12, sweeps=20, m_tilde=4)
print(f"--- impurity 0.4: s0={wh.s0} m~={ttn.m_tilde} E={ttn.energy:.6f} {time.time()-t1:.1f}s")
dsp = scaling.defect_spectrum(ttn)
print("lam0", dsp.values[0])
if dsp.parities is not None:
    oddd = dsp.dims(parity=-1.0)
    print("odd dims:", np.round(oddd[:4], 5), "predicted:", scaling.predicted_defect_dims(0.4))
print("all dims:", np.round(dsp.dimensions[:10], 4))
print("pars:", dsp.parities[:10] if dsp.parities is not None else None)
# impurity correlator ratios
bsp = scaling.bulk_spectrum(mera)
for (i, j) in [(0, 0), (1, 1)]:
    vals = [scaling.impurity_correlator(ttn, mera, i, j, s, defect_spec=dsp,
                                        bulk_spec=bsp) for s in (1, 2, 3)]
    lam = (dsp.values[i] * bsp.values[j]).real
    print(f"ic i={i} j={j}: {vals} ratio {vals[1]/vals[0]:.8f} lam {lam:.8f}")
# two-sided profiles
for side in (0, 1):
    zm = scaling.expectation_profile(ttn, mera, PAULI_Z, 12, side=side)
    print(f"side {side} z: {np.round(zm, 4)}")
print(f"total {time.time()-t0:.1f}s")
