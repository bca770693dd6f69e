"""Pressure drop through a small packed bed compared with the Ergun correlation.

A 10 x 10 x 60 mm duct holds 1 mm spheres at void fraction 0.5 between
z = 10 mm and z = 50 mm. Gas enters at the bottom; each inlet velocity is
marched in time until the pressure drop between two planes outside the bed
stops changing. The simulated drop is printed next to the Ergun estimate.

Run:  python demos/packed_bed.py [difelice|rong] [A|B]
"""

import sys

from vansfem.packedbed import BedConfig, generate_packing, run_bed_sweep, wen_yu_umf


def main(drag="difelice", form="B"):
    cfg = BedConfig(drag_model=drag, form=form)
    umf, ar = wen_yu_umf(cfg.rho_f, cfg.rho_p, cfg.d_p, cfg.mu_f)
    print(f"Archimedes number {ar:.4g}, minimum fluidization velocity {umf:.3f} m/s")
    particles = generate_packing(cfg)
    report = run_bed_sweep(cfg, particles)
    print(f"{report.n_particles} particles, bed void fraction {report.eps_achieved:.4f}, "
          f"bed height {report.bed_height * 1e3:.2f} mm")
    print(f"{'u_in':>6} {'Re_bed':>7} {'dp sim':>9} {'dp Ergun':>9} {'ratio':>6} {'mass':>9}")
    for r in report.rows:
        print(f"{r.u_in:6.2f} {r.re_bed:7.0f} {r.dp_sim:9.3f} {r.dp_ergun:9.3f} "
              f"{r.dp_sim / r.dp_ergun:6.3f} {r.mass_global:9.2e}")
    print(f"monotone in inlet velocity: {report.monotone}")


if __name__ == "__main__":
    args = sys.argv[1:]
    main(args[0] if args else "difelice", args[1] if len(args) > 1 else "B")
