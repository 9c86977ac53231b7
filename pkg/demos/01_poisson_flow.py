"""
Selling 20 units into Poisson order flow
========================================

Orders arrive at rate 1; selling ``a`` units into one order costs a**2 / 2.
"""


from liquidation import DepthFunction, solve_base, solve_continuous
from liquidation.base_solver import closed_form_small_k, lower_bound, poisson_counts, thresholds, upper_bound
from liquidation.continuous import approximate_discrete

F = DepthFunction(0.5, 2.0)
s = solve_base(1.0, F, 20, 2.0, dt=0.001)

# the value with one year left, next to the two bounds
p = poisson_counts(1.0, 60)
print("v(20, 1)      =", round(s.value(20, 1.0), 3))
print("genie bound   =", round(lower_bound(p, F, 20), 3))
print("constant-c    =", upper_bound(p, F, 20))

# sale sizes shrink as the deadline recedes
for T in (0.0, 0.5, 1.0, 2.0):
    print(f"T={T:3.1f}  a(k, T) for k=1..20:", s.a[1:, int(round(T / s.dt))].tolist())

# small inventories have explicit answers
for k in (1, 2, 3):
    print(f"k={k}: grid {s.value(k, 1.0):.5f}  exact {closed_form_small_k(1.0, F, k, 1.0):.5f}")
print("switch from 2 to 1 at k=4 happens at T =", thresholds(s, 4))

# for large k the value is close to F(k) u(T)
c = solve_continuous(1.0, 2.0, 2.0)
for k in (10, 20):
    v = s.value(k, 1.0)
    approx, a = approximate_discrete(c, F, k, 1.0)
    print(f"k={k}: v={v:.3f}  F(k)u(T)={approx:.3f}  rel gap {abs(approx - v) / v:.1e}  a~{a}")
