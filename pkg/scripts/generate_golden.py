"""Regenerate the golden reference tables (development tool).

Special-function values come from an independent arbitrary-precision
computation (mpmath at 40 digits); the Mie magnitude table and the
pinned operator symbol come from the validated oracle implementation
and are frozen here as regression data.  Run from the repository root:

    python scripts/generate_golden.py
"""

import pathlib

import mpmath as mp
import numpy as np

from igabem.oracle import MieSeries, sphere_operator_symbol

mp.mp.dps = 40
OUT = pathlib.Path(__file__).resolve().parent.parent / "src" / "igabem" / "golden"


def fmt(x) -> str:
    return mp.nstr(x, 30)


def sph_j(l, x):
    return mp.sqrt(mp.pi / (2 * x)) * mp.besselj(l + mp.mpf(1) / 2, x)


def sph_y(l, x):
    return mp.sqrt(mp.pi / (2 * x)) * mp.bessely(l + mp.mpf(1) / 2, x)


def main() -> None:
    rows = []
    for l, x in [(0, 1.0), (3, 0.5), (5, 2.7), (12, 4.0), (20, 5.0)]:
        rows.append(("j", l, x, fmt(sph_j(l, mp.mpf(x))), "0"))
    for l, x in [(0, 3.141592653589793), (2, 1.0), (7, 3.3)]:
        h = sph_j(l, mp.mpf(x)) + 1j * sph_y(l, mp.mpf(x))
        rows.append(("h1", l, x, fmt(mp.re(h)), fmt(mp.im(h))))
    for l, t in [(10, 0.3), (7, -0.9)]:
        rows.append(("P", l, t, fmt(mp.legendre(l, mp.mpf(t))), "0"))
    with open(OUT / "special_functions.txt", "w") as fh:
        fh.write("# function l argument value_re value_im (30 digits, mpmath)\n")
        for name, l, x, re, im in rows:
            fh.write(f"{name} {l} {x!r} {re} {im}\n")

    mie = MieSeries("soft", 1.0)
    thetas = np.arange(0, 181, 10)
    mags = np.abs(mie.far_field(np.cos(np.deg2rad(thetas))))
    with open(OUT / "mie_soft_k1_farfield.txt", "w") as fh:
        fh.write("# theta_deg |u_inf|  (soft sphere, kappa=1, validated series)\n")
        for th, mag in zip(thetas, mags):
            fh.write(f"{th} {mag:.17g}\n")

    sym = sphere_operator_symbol("V", 1, 1.0)
    with open(OUT / "v_symbol_l1_k1.txt", "w") as fh:
        fh.write("# V symbol on Y_1 at kappa=1, brute-force quadrature\n")
        fh.write(f"{sym.real:.17g} {sym.imag:.17g}\n")
    print("golden tables written to", OUT)


if __name__ == "__main__":
    main()
