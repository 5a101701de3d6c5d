"""Numerical checks of the constructive theorems at desk scale.

Every check is a pure function of its arguments and seed and returns a
:class:`VerificationResult`; ``passed`` is exactly the stated inequality
evaluated on the measured statistic.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .linalg_core import numeric_rank, spectral_norm
from .rational_head import init_near_identity, make_head, transition_table
from .scan import scan_backward
from .wfa_core import Wfa, enumerate_words, make_parity


@dataclass
class VerificationResult:
    name: str
    passed: bool
    measured: float
    bound: float
    tolerance: float
    instance: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag}  {self.name:<28} measured={self.measured:.3e}  bound={self.bound:.3e}"


def _prefix_states(wfa: Wfa, words) -> np.ndarray:
    return np.stack([wfa.word_matrix(w) @ wfa.alpha for w in words])


# ------------------------------------------------------------ universality


def random_wfa(alphabet_size: int, d: int, rng) -> Wfa:
    """Gaussian automaton, entries ``N(0, 1/d)``."""
    scale = 1 / np.sqrt(d)
    return Wfa(scale * rng.standard_normal(d), scale * rng.standard_normal((alphabet_size, d, d)))


def check_universality(target: Wfa | None = None, d: int = 32, max_len: int = 4, seed=0, max_retries: int = 3,
                       source: Wfa | None = None) -> VerificationResult:
    """Fit ``W`` with ``W h_u = h*_u`` over all nonempty prefixes ``u`` (``|u| <= max_len``).

    ``source`` replaces the random automaton (used for the self-reconstruction case).
    """
    target = make_parity() if target is None else target
    words = list(enumerate_words(target.alphabet_size, max_len, min_len=1))
    H_star = _prefix_states(target, words)  # (N, d*)
    rng = np.random.default_rng(seed)
    attempts = []
    for attempt in range(max_retries):
        feat = source if source is not None else random_wfa(target.alphabet_size, d, rng)
        H = _prefix_states(feat, words)  # (N, d)
        rank = numeric_rank(H, 1e-12)
        # Least squares W^T = H^+ H*, i.e. W = H*^T (H^T)^+.
        Wt, *_ = np.linalg.lstsq(H, H_star, rcond=None)
        resid = float(np.max(np.abs(H @ Wt - H_star)))
        attempts.append({"seed_offset": attempt, "rank": int(rank), "residual": resid})
        if rank == len(words) or source is not None or feat.dim < len(words):
            break
    return VerificationResult(
        "universality", resid <= 1e-6, resid, 1e-6, 0.0,
        {"d": feat.dim, "n_prefixes": len(words), "max_len": max_len, "seed": seed, "target_dim": target.dim},
        {"attempts": attempts},
    )


# --------------------------------------------------- approximation scaling


def _haar_orthogonal(rng, n: int, b: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, b, b)))
    return q * np.sign(np.diagonal(r, axis1=-2, axis2=-1))[:, None, :]


def random_features(words: np.ndarray, n_blocks: int, rng, alphabet_size: int = 2, b: int = 3) -> np.ndarray:
    """States of a direct sum of ``n_blocks`` independent ``b``-dim random automata.

    Block transitions are Haar-orthogonal (spectral norm exactly 1), so every
    block state has unit norm.  Returns ``(n_words, n_blocks, b)``.
    """
    n, L = words.shape
    mats = _haar_orthogonal(rng, n_blocks * alphabet_size, b).reshape(n_blocks, alphabet_size, b, b)
    alpha = rng.standard_normal((n_blocks, b))
    alpha /= np.linalg.norm(alpha, axis=1, keepdims=True)
    h = np.broadcast_to(alpha, (n, n_blocks, b))
    for t in range(L):
        h = np.einsum("mnij,nmj->nmi", mats[:, words[:, t]], h)
    return h


def check_approx_scaling(target: Wfa | None = None, dims=(8, 16, 32, 64, 128, 256, 512), trials: int = 10,
                         seed=0, length: int = 8, n_reference: int = 20000, ridge: float = 1e-3,
                         block_dim: int = 3) -> VerificationResult:
    """Log-log slope of readout-only approximation error vs state dimension.

    The kernel ``K(x, x') = E <M_x a, M_x' a>`` of a direct sum of independent
    random orthogonal blocks is estimated from ``n_reference`` state
    dimensions; the target is the RKHS projection ``f* = K c`` of the
    automaton's labelling (parity by default) on all strings of ``length``.
    A model with ``d`` fresh random state dimensions uses the readout
    ``w = (1/m) sum_j c_j h(x_j)`` (``m`` blocks), a Monte-Carlo estimate of
    ``f*`` whose RMS error should scale as ``d^-1/2``.  Within a trial the
    feature banks are nested, so doubling ``d`` adds blocks to the same model.
    """
    target = make_parity() if target is None else target
    rng = np.random.default_rng(seed)
    words = np.array(list(enumerate_words(target.alphabet_size, length, min_len=length)))
    final = np.stack([target.word_matrix(w) @ target.alpha for w in words])
    labels = np.where(np.argmax(final, axis=1) == 0, 1.0, -1.0)
    n = len(words)
    b = block_dim

    n_ref = n_reference // b
    ref = random_features(words, n_ref, rng, target.alphabet_size, b).reshape(n, -1)
    K = ref @ ref.T / n_ref
    lam = ridge * np.trace(K) / n
    c = np.linalg.solve(K + lam * np.eye(n), labels)
    f_star = K @ c

    dims = [int(d) for d in dims]
    errors = np.empty((len(dims), trials))
    for r in range(trials):
        bank = random_features(words, max(1, max(dims) // b), rng, target.alphabet_size, b)
        for i, d in enumerate(dims):
            m = max(1, d // b)
            phi = bank[:, :m].reshape(n, -1)
            f_d = phi @ (phi.T @ c) / m
            errors[i, r] = np.sqrt(np.mean((f_d - f_star) ** 2))
    med = np.median(errors, axis=1)
    slope = float(np.polyfit(np.log(dims), np.log(med), 1)[0])
    monotone = bool(np.all(np.diff(med) <= 0))
    passed = -0.8 <= slope <= -0.3
    return VerificationResult(
        "approx_scaling", passed, slope, -0.5, 0.0,
        {"dims": dims, "trials": trials, "length": length, "seed": seed, "block_dim": b, "n_reference": n_reference},
        {"median_rms": med.tolist(), "monotone_median": monotone, "slope_window": [-0.8, -0.3],
         "target_rms": float(np.sqrt(np.mean(f_star**2))),
         "target_vs_labels_rms": float(np.sqrt(np.mean((f_star - labels) ** 2))),
         "learned_d2_error": 0.0},
    )


# -------------------------------------------------------------- gradients


def check_grad_norm(kind: str = "scaled_cayley", T: int = 4096, seed=0, gamma: float = 0.9, d: int = 8,
                    T_contractive: int = 100) -> VerificationResult:
    """Adjoint norms under orthogonal and contractive transitions.

    Orthogonal: zero injections, ``| ||delta_t|| - ||delta_T|| | <= 1e-10`` for all t.
    Contractive: ``||delta_0|| <= gamma^T ||delta_T|| + T max||v||`` with random
    injections, ``||delta_0|| / ||delta_T|| <= gamma^T`` without them, and the
    injection-only adjoint equals ``sum_j (M^T)^j v`` evaluated directly.
    """
    rng = np.random.default_rng(seed)
    head = make_head(kind, d, 3, **({"conserve": True} if kind == "scaled_cayley" else {}))
    init_near_identity(head, 0.0, 0.1, rng)
    if kind == "scaled_cayley":
        head.params["W"] = rng.standard_normal(head.params["W"].shape)
    table, _ = transition_table(head)
    tokens = rng.integers(0, 3, T)
    ops = table[tokens]
    delta_T = rng.standard_normal(d)
    deltas = scan_backward(ops, np.zeros((T, d)), delta_T)
    norms = np.linalg.norm(deltas, axis=1)
    drift = float(np.max(np.abs(norms - np.linalg.norm(delta_T))))

    # Contractive family: orthogonal transitions scaled by gamma.
    Tc = T_contractive
    cops = gamma * ops[:Tc]
    v = rng.standard_normal((Tc, d))
    dc = scan_backward(cops, v, delta_T)
    lhs = float(np.linalg.norm(dc[0]))
    rhs = gamma**Tc * float(np.linalg.norm(delta_T)) + Tc * float(np.max(np.linalg.norm(v, axis=1)))
    d0 = scan_backward(cops, np.zeros((Tc, d)), delta_T)
    ratio = float(np.linalg.norm(d0[0]) / np.linalg.norm(delta_T))
    inj_only = scan_backward(cops, v, np.zeros(d))[0]
    # delta_0 = sum_{j} (M_1^T ... M_j^T) v_{j-1}
    direct = np.zeros(d)
    acc = np.eye(d)
    for j in range(Tc):
        direct += acc @ v[j]
        acc = acc @ cops[j].T
    maint_err = float(np.max(np.abs(inj_only - direct)))
    passed = drift <= 1e-10 and lhs <= rhs and ratio <= gamma**Tc * (1 + 1e-9) and maint_err <= 1e-10
    return VerificationResult(
        "grad_norm", passed, drift, 1e-10, 0.0,
        {"kind": kind, "T": T, "d": d, "gamma": gamma, "T_contractive": Tc, "seed": seed},
        {"contractive_lhs": lhs, "contractive_rhs": rhs, "zero_injection_ratio": ratio,
         "gamma_pow_T": gamma**Tc, "injection_only_norm": float(np.linalg.norm(inj_only)),
         "injection_sum_mismatch": maint_err},
    )


# ------------------------------------------------- time-invariant error


def check_time_invariant_error(m_star: np.ndarray | None = None, eps: float = 1e-3, gamma: float = 0.9,
                               T: int = 10000, seed=0, d: int = 8) -> VerificationResult:
    """Roll ``h* <- M* h* + u_t`` and ``h~ <- M^ h~ + u_t`` with shared bounded inputs.

    ``M^ = M* + Delta`` with ``||Delta||_2 = eps``; ``C`` is the measured
    ``sup ||h*_{t-1}||``.  Passes iff ``sup_t ||h*_t - h~_t|| <= eps_eff C / (1 - gamma)``,
    where ``eps_eff = ||M^ - M*||_2`` after keeping ``||M^||_2 <= gamma``.
    """
    rng = np.random.default_rng(seed)
    if m_star is None:
        m_star = rng.standard_normal((d, d))
        m_star *= (gamma - eps) / spectral_norm(m_star)
    m_star = np.asarray(m_star, dtype=np.float64)
    d = m_star.shape[0]
    if eps > 0:
        delta = rng.standard_normal((d, d))
        delta *= eps / spectral_norm(delta)
        m_hat = m_star + delta
        norm_hat = spectral_norm(m_hat)
        if norm_hat > gamma:
            m_hat *= gamma / norm_hat
    else:
        m_hat = m_star  # same array: identical rounding in both rollouts
    eps_eff = spectral_norm(m_hat - m_star) if eps > 0 else 0.0
    u = rng.uniform(-1, 1, (T, d))
    h_star = np.zeros(d)
    h_hat = np.zeros(d)
    sup_dev = 0.0
    C = 0.0
    for t in range(T):
        C = max(C, float(np.linalg.norm(h_star)))
        h_star = m_star @ h_star + u[t]
        h_hat = m_hat @ h_hat + u[t]
        sup_dev = max(sup_dev, float(np.linalg.norm(h_star - h_hat)))
    bound = eps_eff * C / (1 - gamma)
    return VerificationResult(
        "time_invariant_error", sup_dev <= bound, sup_dev, bound, 0.0,
        {"d": d, "eps": eps, "gamma": gamma, "T": T, "seed": seed},
        {"C": C, "eps_effective": eps_eff, "norm_m_star": spectral_norm(m_star), "norm_m_hat": spectral_norm(m_hat)},
    )


# ----------------------------------------------- virtual tensorization


def check_virtual_tensorization(d: int = 8, seed=0, d_model: int = 16, d_head: int = 8) -> VerificationResult:
    """Rational part of the attention score as a bilinear form and as ``vec(M)^T (h' kron h)``.

    With ``q = W_Q W_proj h`` and ``k = W_K W_proj h'``, the score is
    ``h^T M h'`` with ``M = W_proj^T W_Q^T W_K W_proj``.
    """
    rng = np.random.default_rng(seed)
    w_proj = rng.standard_normal((d_model, d))
    wq = rng.standard_normal((d_head, d_model))
    wk = rng.standard_normal((d_head, d_model))
    h, h2 = rng.standard_normal(d), rng.standard_normal(d)
    score = float((wq @ w_proj @ h) @ (wk @ w_proj @ h2))
    M = w_proj.T @ wq.T @ wk @ w_proj
    bilinear = float(h @ M @ h2)
    # Column-major vec: vec(M)[i + d*j] = M[i, j], paired with (h' kron h)[j*d + i] = h'_j h_i.
    tensor = float(M.T.ravel() @ np.kron(h2, h))
    diff = max(abs(bilinear - tensor), abs(score - bilinear))
    scale = max(1.0, abs(bilinear))
    return VerificationResult(
        "virtual_tensorization", diff <= 1e-10 * scale, diff, 1e-10 * scale, 0.0,
        {"d": d, "d_model": d_model, "d_head": d_head, "seed": seed},
        {"bilinear": bilinear, "kronecker": tensor, "attention_score": score},
    )


# ------------------------------------------------------------- Lipschitz


def check_lipschitz(gamma: float = 0.9, k_m: float = 0.01, T_values=(100, 1000, 10000), seed=0, d: int = 8,
                    d_in: int = 4, rho: float = 0.1, tail: int = 50) -> VerificationResult:
    """Input-to-final-state Lipschitz bound for ``h_t = M(x_t) h_{t-1} + b``.

    ``M(x) = M_0 + sum_k x_k G_k`` with ``x in [-1, 1]^d_in``; ``K_M = sqrt(sum ||G_k||^2)``
    and ``||M_0|| = gamma - sqrt(d_in) K_M`` give ``||M(x)|| <= gamma`` on the cube.
    Each length uses the last ``T`` inputs of one master stream and perturbs
    only the final ``tail`` inputs, so the measured ratios are comparable.
    """
    rng = np.random.default_rng(seed)
    margin = gamma - np.sqrt(d_in) * k_m
    if margin <= 0:
        raise ValueError("gamma - sqrt(d_in) * k_m must be positive")
    M0 = rng.standard_normal((d, d))
    M0 *= margin / spectral_norm(M0)
    G = rng.standard_normal((d_in, d, d))
    G *= k_m / np.sqrt(sum(spectral_norm(g) ** 2 for g in G))
    bias = rng.standard_normal(d)
    alpha = rng.standard_normal(d)
    Tmax = max(T_values)
    master = rng.uniform(-1, 1, (Tmax, d_in))
    pert = master[-tail:] + rng.uniform(-rho, rho, (tail, d_in))
    pert = np.clip(pert, -1, 1)

    def roll(xs):
        mats = M0 + np.einsum("tk,kij->tij", xs, G)
        h = alpha.copy()
        sup_h = float(np.linalg.norm(h))
        for m in mats:
            h = m @ h + bias
            sup_h = max(sup_h, float(np.linalg.norm(h)))
        return h, sup_h

    rows = []
    ok = True
    for T in T_values:
        xs = master[-T:]
        xp = xs.copy()
        xp[-tail:] = pert[-min(tail, T):]
        h, _ = roll(xs)
        hp, R = roll(xp)
        dev = float(np.linalg.norm(h - hp))
        sup_dx = float(np.max(np.linalg.norm(xs - xp, axis=1)))
        bound = k_m * R / (1 - gamma) * sup_dx
        ok &= dev <= bound
        rows.append({"T": int(T), "deviation": dev, "sup_dx": sup_dx, "R": R, "bound": bound,
                     "ratio": dev / sup_dx if sup_dx else 0.0})
    ratios = np.array([r["ratio"] for r in rows])
    spread = float((ratios.max() - ratios.min()) / ratios.mean()) if ratios.mean() else 0.0

    # Single-position perturbation ``s`` steps before the end.
    s = 10
    xs = master[-T_values[0]:]
    xp = xs.copy()
    xp[-s - 1] = np.clip(xp[-s - 1] + rho, -1, 1)
    h, _ = roll(xs)
    hp, R = roll(xp)
    single_dev = float(np.linalg.norm(h - hp))
    single_bound = k_m * R * gamma**s * float(np.linalg.norm(xs[-s - 1] - xp[-s - 1]))
    worst = max(r["deviation"] / r["bound"] if r["bound"] else 0.0 for r in rows)
    return VerificationResult(
        "lipschitz", bool(ok and single_dev <= single_bound), worst, 1.0, 0.0,
        {"gamma": gamma, "k_m": k_m, "T_values": list(map(int, T_values)), "d": d, "d_in": d_in, "seed": seed,
         "rho": rho, "tail": tail},
        {"rows": rows, "ratio_spread": spread, "single_position_deviation": single_dev,
         "single_position_bound": single_bound},
    )


def run_all(seed=0) -> list:
    return [
        check_universality(seed=seed),
        check_approx_scaling(seed=seed),
        check_grad_norm(seed=seed),
        check_time_invariant_error(seed=seed),
        check_virtual_tensorization(seed=seed),
        check_lipschitz(seed=seed),
    ]
