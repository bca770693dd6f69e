"""Manufactured-solution convergence study.

Solves case 1 (varying void fraction, divergence-free velocity) in Form B on
three meshes with Q1-Q1 and Q2-Q2 elements and prints the error table with
the fitted orders. Each mesh is reached by continuation in the viscosity,
starting at nu = 1 and stepping down to the study viscosity.

Run:  python demos/mms_convergence.py [case] [form]
"""

import sys

from vansfem.mms import MMS_VISCOSITY, fit_order, run_convergence_study


def main(case=1, form="B", meshes=(8, 16, 32)):
    print(f"case {case}, form {form}, nu = {MMS_VISCOSITY}")
    for k in (1, 2):
        table = run_convergence_study(case, form, k, meshes=meshes)
        print(f"\nQ{k}-Q{k}")
        print(f"{'h':>10} {'dofs':>8} {'|u-uh|':>12} {'|p-ph|':>12}")
        for h, dofs, eu, ep in table.rows:
            print(f"{h:10.5f} {dofs:8d} {eu:12.4e} {ep:12.4e}")
        vel, pres = fit_order(table)
        print(f"fitted orders: velocity {vel:.2f} (expected {k + 1}), pressure {pres:.2f}")


if __name__ == "__main__":
    args = sys.argv[1:]
    main(int(args[0]) if args else 1, args[1] if len(args) > 1 else "B")
