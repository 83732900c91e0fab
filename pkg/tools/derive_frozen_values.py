"""Recompute the frozen reference values used by the test suite.

Everything here is re-derived with mpmath at 50 digits from the defining
formulas (sums, integrals and first-order conditions), without importing
dptune. Run it and compare with the literals in tests/test_*.py:

    python3 tools/derive_frozen_values.py
"""

import mpmath as mp

mp.mp.dps = 50


def show(name, value):
    print(f"{name:<44} {mp.nstr(value, 17)}")


# --- repetition distributions ------------------------------------------------

def tnb_pmf(eta, gamma, k):
    eta, gamma = mp.mpf(eta), mp.mpf(gamma)
    return (1 - gamma) ** k / (gamma ** (-eta) - 1) * mp.gamma(k + eta) / (mp.factorial(k) * mp.gamma(eta))


def log_pmf(gamma, k):
    gamma = mp.mpf(gamma)
    return (1 - gamma) ** k / (k * mp.log(1 / gamma))


def pgf_from_pmf(pmf, x, start=1):
    return mp.nsum(lambda k: pmf(int(k)) * mp.mpf(x) ** k, [start, mp.inf])


for k in (1, 2, 3, 4):
    show(f"tnb(0.5,0.3).pmf({k})", tnb_pmf(0.5, 0.3, k))
show("tnb(0.5,0.3).mean", mp.nsum(lambda k: k * tnb_pmf(0.5, 0.3, int(k)), [1, mp.inf]))
show("tnb(0.5,0.3).pgf(0.7)", pgf_from_pmf(lambda k: tnb_pmf(0.5, 0.3, k), 0.7))
show("tnb(0.5,0.3).pgf'(0.7)", mp.nsum(lambda k: k * tnb_pmf(0.5, 0.3, int(k)) * mp.mpf(0.7) ** (k - 1), [1, mp.inf]))
show("logarithmic(0.1).mean", mp.nsum(lambda k: k * log_pmf(0.1, int(k)), [1, mp.inf]))
show("logarithmic(0.1).pmf(2)", log_pmf(0.1, 2))
show("poisson(3).pmf(2)", mp.mpf(3) ** 2 / 2 * mp.e ** -3)


def chernoff(log_pgf_exp, k, bracket):
    # inf_t log f(e^t) - t k, through the stationary point
    t = mp.findroot(lambda t: mp.diff(log_pgf_exp, t) - k, bracket, solver="anderson")
    return mp.e ** (log_pgf_exp(t) - t * k)


def geo_log_pgf_exp(gamma):
    gamma = mp.mpf(gamma)
    return lambda t: mp.log(gamma * mp.e ** t / (1 - (1 - gamma) * mp.e ** t))


show("geometric(0.5).tail_bound(10)", chernoff(geo_log_pgf_exp(0.5), 10, (0.01, 0.69)))
show("poisson(1).tail_bound(5)", chernoff(lambda t: mp.e ** t - 1, 5, (0.1, 5)))

# --- accountant --------------------------------------------------------------


def tnb_mean(eta, gamma):
    eta, gamma = mp.mpf(eta), mp.mpf(gamma)
    return eta * (1 - gamma) / (gamma * (1 - gamma ** eta))


def tnb_raw(eps, eps_hat, eta, gamma, lam, lam_hat):
    eta, gamma, lam, lam_hat = (mp.mpf(v) for v in (eta, gamma, lam, lam_hat))
    return (eps + (1 + eta) * (1 - 1 / lam_hat) * eps_hat + (1 + eta) * mp.log(1 / gamma) / lam_hat
            + mp.log(tnb_mean(eta, gamma)) / (lam - 1))


show("tnb_formula(0.5,0.3,0.5,0.1,4,2)", tnb_raw(0.5, 0.3, 0.5, 0.1, 4, 2))


def zcdp_tnb(rho, eta, gamma, lam):
    # minimize over lam_hat >= 1 and over orders lam' >= lam (monotone closure)
    rho = mp.mpf(rho)
    hat = lambda h: (1 + eta) * ((1 - 1 / h) * rho * h + mp.log(1 / mp.mpf(gamma)) / h)
    h_star = mp.findroot(lambda h: mp.diff(hat, h), 3)
    h_star = max(h_star, mp.mpf(1))
    lm = mp.log(tnb_mean(eta, gamma))
    order = lambda o: rho * o + lm / (o - 1)
    o_star = mp.findroot(lambda o: mp.diff(order, o), 3)
    o_best = max(o_star, mp.mpf(lam))
    return hat(h_star) + order(o_best)


show("tnb zcdp(0.1, eta=1, gamma=0.01) lam=8", zcdp_tnb(0.1, 1, 0.01, 8))
show("tnb zcdp(0.1, eta=1, gamma=0.01) lam=2", zcdp_tnb(0.1, 1, 0.01, 2))

show("poisson(1,0.2,1e-3,mu=10,lam=4)", 1 + 10 * mp.mpf("1e-3") + mp.log(10) / 3)
v = mp.mpf("0.5") + mp.mpf("0.5") * mp.mpf("1e-3") + mp.log(mp.mpf("0.5")) / 2
show("poisson(0.5,.,1e-3,mu=0.5,lam=3)+atom", mp.log(mp.e ** mp.mpf(-0.5) + mp.e ** (2 * v)) / 2)
show("point mass zcdp(0.1) k=3 lam=4", 3 * mp.mpf("0.4") + mp.log(3) / 3)
show("point mass lower eps=1 k=3 lam=4", 3 - 3 * mp.log(1 + mp.e ** -1) / 3)


def approx_dp_from_zcdp(rho, delta):
    rho, delta = mp.mpf(rho), mp.mpf(delta)
    f = lambda o: rho * o + (mp.log(1 / delta) + (o - 1) * mp.log(1 - 1 / o) - mp.log(o)) / (o - 1)
    o = mp.findroot(lambda o: mp.diff(f, o), (2, 200), solver="anderson")
    return f(o)


show("zcdp(0.1) -> eps at delta=1e-6", approx_dp_from_zcdp(0.1, "1e-6"))
e0 = mp.mpf("0.1")
show("poisson approx-DP eps (0.1, 1e-6, mu=10)", e0 + (mp.e ** e0 - 1) * mp.log(10))
show("poisson approx-DP delta", 1 - mp.e ** (-10 * mp.mpf("1e-6")))
show("poisson approx-DP lambda_max", 1 + 1 / (mp.e ** e0 - 1))

# --- oracle ------------------------------------------------------------------


def renyi(p, q, lam):
    lam = mp.mpf(lam)
    return mp.log(sum(a ** lam * b ** (1 - lam) for a, b in zip(p, q) if a > 0)) / (lam - 1)


def max_law(q, pgf):
    # index 0 is preferred, so "worse than y" is the mass after y
    out, worse = [], mp.mpf(0)
    for x in reversed(q):
        out.append(pgf(worse + x) - pgf(worse))
        worse += x
    return out[::-1]


geo = lambda x: mp.mpf("0.5") * x / (1 - mp.mpf("0.5") * x)
law = max_law([mp.mpf("0.2"), mp.mpf("0.5"), mp.mpf("0.3")], geo)
for i, x in enumerate(law):
    show(f"max law geometric(0.5) (.2,.5,.3) [{i}]", x)

rr = lambda e: ([1 / (1 + mp.e ** e), mp.e ** e / (1 + mp.e ** e)], [mp.e ** e / (1 + mp.e ** e), 1 / (1 + mp.e ** e)])
p, pp = rr(1)
show("RR(1) D_2", renyi(p, pp, 2))
pk = lambda q: max_law(q, lambda x: x ** 3)
show("RR(1), k=3, D_4", renyi(pk(p), pk(pp), 4))


def triple(s, t, a):
    x, y = a * mp.e ** -s, a * mp.e ** (-s - t)
    return [x, x, 1 - 2 * x], [y, a, 1 - a - y]


def conditional_triple(lam, a="0.01"):
    lam, a = mp.mpf(lam), mp.mpf(a)
    rate = lam / 10

    def eqs(s, t):
        q, qq = triple(s, t, a)
        return [renyi(q, qq, lam) - rate, renyi(qq, q, lam) - rate]

    s, t = mp.findroot(eqs, (mp.mpf(3), mp.mpf(6)))
    q, qq = triple(s, t, a)
    cs, cps = q[0] + q[1], qq[0] + qq[1]
    exact = renyi([q[0] / cs, q[1] / cs], [qq[0] / cps, qq[1] / cps], lam)
    return s, t, exact


s, t, exact = conditional_triple(4)
show("conditional triple lam=4 s", s)
show("conditional triple lam=4 t", t)
show("conditional triple lam=4 exact", exact)

# --- utility -----------------------------------------------------------------

show("E quantile geometric(0.5)", 1 - mp.quad(geo, [0, 1]))
lgf = lambda x: mp.log(1 - (1 - mp.mpf("0.5")) * x) / mp.log(mp.mpf("0.5"))
show("E quantile logarithmic(0.5)", 1 - mp.quad(lgf, [0, 1]))
show("E quantile poisson(2)", 1 - mp.quad(lambda x: mp.e ** (2 * (x - 1)), [0, 1]))
show("success poisson(10) p=0.01", 1 - mp.e ** (-mp.mpf("0.1")))
# E[max of K uniforms] for K ~ Geometric(0.5): integral of x d f(x)
show("E best uniform score geometric(0.5)", mp.quad(lambda x: x * mp.diff(geo, x), [0, 1]))
