"""Pick the central noise level for a training run and convert the result to
(eps, delta)."""

from privfl import accountant as A

T, q, rho = 10_000, 2e-4, 1.0
for eps in (0.5, 1.0, 2.0):
    sigma = A.sigma_for_budget(T, q, rho, eps)
    print(f"Renyi-2 budget {eps}: sigma = {sigma:.4f} "
          f"(linearized {A.sigma_linearized(T, q, rho, eps):.4f}), "
          f"eps at delta=1e-6: {A.renyi_to_dp(eps, 2.0, 1e-6):.2f}")

state = A.AccountantState(q=q, rho=rho, sigma=A.sigma_for_budget(T, q, rho, 1.0))
state.step(rounds=T // 2)
print(f"halfway through: spent {state.eps_renyi_total:.4f}")
