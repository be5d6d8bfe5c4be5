"""Independent scalar (K = 1) oracles, written with the math module and loops.

Nothing here imports the package's numerics; the formulas are coded from
the model definition so they can catch vectorization and sign mistakes.
"""
import math


def lse(v):
    m = max(v)
    return m + math.log(sum(math.exp(x - m) for x in v))


def probs(x, b):
    u = [xj * b for xj in x]
    g = lse(u)
    return [math.exp(uj - g) for uj in u]


def norm_logpdf(x, m, var):
    return -0.5 * (math.log(2 * math.pi * var) + (x - m) ** 2 / var)


def gamma_logpdf(a, shape, rate):
    return shape * math.log(rate) - math.lgamma(shape) + (shape - 1) * math.log(a) - rate * a


def iw1_logpdf(omega, dof, scale):
    # K = 1 inverse-Wishart is an inverse-gamma(dof / 2, scale / 2)
    al, be = dof / 2, scale / 2
    return al * math.log(be) - math.lgamma(al) - (al + 1) * math.log(omega) - be / omega


def joint_log_density(xs, ys, person, beta, mu, zeta, sB, sW, aB, aW, hyp):
    """``xs[m]`` is the list of scalar attributes of row m."""
    total = 0.0
    for m, x in enumerate(xs):
        total += x[ys[m]] * beta[m] - lse([xj * beta[m] for xj in x])
        total += norm_logpdf(beta[m], mu[person[m]], sW)
    for n in range(len(mu)):
        total += norm_logpdf(mu[n], zeta, sB)
    total += norm_logpdf(zeta, hyp["xi0"], hyp["Xi0"])
    total += iw1_logpdf(sB, hyp["nu_B"], 2 * hyp["nu_B"] * aB)
    total += iw1_logpdf(sW, hyp["nu_W"], 2 * hyp["nu_W"] * aW)
    total += gamma_logpdf(aB, 0.5, hyp["A_B"] ** -2)
    total += gamma_logpdf(aW, 0.5, hyp["A_W"] ** -2)
    return total


def mh_log_ratio(x, y, b_new, b_old, mu, sW):
    ll = lambda b: x[y] * b - lse([xj * b for xj in x])  # noqa: E731
    return ll(b_new) - ll(b_old) + norm_logpdf(b_new, mu, sW) - norm_logpdf(b_old, mu, sW)


def expected_lse_delta(x, m, s):
    p = probs(x, m)
    xbar = sum(pj * xj for pj, xj in zip(p, x))
    h = sum(pj * xj * xj for pj, xj in zip(p, x)) - xbar ** 2
    return lse([xj * m for xj in x]) + 0.5 * h * s


def ncvmp_row(x, y, m, s, prior_mean, prior_prec):
    """One NCVMP update of a scalar beta factor (no damping)."""
    p = probs(x, m)
    J = len(x)
    xbar = sum(p[j] * x[j] for j in range(J))
    h = sum(p[j] * x[j] ** 2 for j in range(J)) - xbar ** 2
    # d/dm of tr(H s) / 2 through p
    v = [sum(x[i] * x[j] * s * p[j] for j in range(J)) - 0.5 * x[i] ** 2 * s for i in range(J)]
    pv = sum(p[i] * v[i] for i in range(J))
    corr = sum(x[i] * p[i] * (v[i] - pv) for i in range(J))
    grad = -prior_prec * (m - prior_mean) + x[y] - xbar + corr
    s_new = 1.0 / (prior_prec + h)
    return m + s_new * grad, s_new


def vb_sweep(xs, ys, person, T, vp, hyp):
    """One scalar coordinate-ascent sweep in the order beta, mu, zeta, Theta_B, Theta_W, d_B, d_W."""
    vp = dict(vp)
    N = len(T)
    pW = vp["w_W"] / vp["Theta_W"]
    mb, sb = [], []
    for r, x in enumerate(xs):
        a, b = ncvmp_row(x, ys[r], vp["mu_beta"][r], vp["Sigma_beta"][r], vp["mu_mu"][person[r]], pW)
        mb.append(a)
        sb.append(b)
    vp["mu_beta"], vp["Sigma_beta"] = mb, sb

    pB = vp["w_B"] / vp["Theta_B"]
    smu, mmu = [], []
    for n in range(N):
        s = 1.0 / (pB + T[n] * pW)
        tot = sum(mb[r] for r in range(len(xs)) if person[r] == n)
        smu.append(s)
        mmu.append(s * (pB * vp["mu_zeta"] + pW * tot))
    vp["Sigma_mu"], vp["mu_mu"] = smu, mmu

    sz = 1.0 / (1.0 / hyp["Xi0"] + N * pB)
    vp["Sigma_zeta"] = sz
    vp["mu_zeta"] = sz * (hyp["xi0"] / hyp["Xi0"] + pB * sum(mmu))

    vp["Theta_B"] = (2 * hyp["nu_B"] * vp["c_B"] / vp["d_B"] + N * sz
                     + sum(smu[n] + (mmu[n] - vp["mu_zeta"]) ** 2 for n in range(N)))
    vp["Theta_W"] = (2 * hyp["nu_W"] * vp["c_W"] / vp["d_W"] + sum(T[n] * smu[n] for n in range(N))
                     + sum(sb[r] + (mb[r] - mmu[person[r]]) ** 2 for r in range(len(xs))))
    vp["d_B"] = hyp["A_B"] ** -2 + vp["w_B"] * hyp["nu_B"] / vp["Theta_B"]
    vp["d_W"] = hyp["A_W"] ** -2 + vp["w_W"] * hyp["nu_W"] / vp["Theta_W"]
    return vp
