"""Parameter ledger: frequencies, amplitudes, mollification and intermittency scales.

All exponent arithmetic is done in log space so that astronomically large
regimes can be checked without overflow; floating values are only produced
on request by ``derive_scales``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field


class ScaleOverflowError(OverflowError):
    pass


@dataclass(frozen=True)
class ParamSet:
    a: int = 16
    b: int = 4
    beta: float = 0.01
    eta: float = 0.25
    c_u: float = 1.0
    c_B: float = 1.0
    q_max: int = 1
    grid_n: int = 64
    time_n: int = 9
    t_pad: float | None = None
    t_end: float = 1.0
    strict: bool = False
    # block scale used by the 3D step; None means lambda_{q+1} itself
    block_lambda: int | None = None
    # "uniform": uniform N_Lambda = 65; "minimal": per-frame denominator
    lattice: str = "uniform"

    def __post_init__(self):
        if int(self.a) != self.a or self.a < 2:
            raise ValueError("a must be an integer >= 2")
        if int(self.b) != self.b or self.b < 2:
            raise ValueError("b must be an integer >= 2")
        if not self.beta > 0 or not self.eta > 0:
            raise ValueError("beta and eta must be positive")
        if not (0 < self.c_u <= 1 and 0 < self.c_B <= 1):
            raise ValueError("c_u and c_B must lie in (0, 1]")
        if self.strict and self.b % 4:
            raise ValueError("strict mode requires b divisible by 4")
        if self.lattice not in ("uniform", "minimal"):
            raise ValueError(f"unknown lattice {self.lattice!r}")
        if self.time_n < 2:
            raise ValueError("time_n must be >= 2")

    def as_dict(self):
        return asdict(self)


def log_lambda(params: ParamSet, q: int) -> float:
    """Natural log of lambda_q = a^(b^q)."""
    return float(params.b) ** q * math.log(params.a)


def lambda_exact(params: ParamSet, q: int, max_bits: int = 4096):
    """Exact integer lambda_q when it fits in ``max_bits`` bits, else None."""
    if params.b ** q * math.log2(params.a) > max_bits:
        return None
    return int(params.a) ** (int(params.b) ** q)


def _exp(x, q, what, exact=None):
    if exact is not None and exact.bit_length() <= 1000:
        return float(exact)
    try:
        return math.exp(x)
    except OverflowError:
        raise ScaleOverflowError(f"scale overflow at q={q}: {what} = exp({x:.6g})") from None


def integer_fourth_root(n: int):
    """Exact integer fourth root of n, or None."""
    if n < 0:
        return None
    r = math.isqrt(math.isqrt(n))
    for c in (r - 1, r, r + 1):
        if c >= 0 and c ** 4 == n:
            return c
    return None


@dataclass(frozen=True)
class ScaleSet:
    q: int
    lambda_q: float
    lambda_q1: float
    delta_q: float
    delta_q1: float
    delta_q2: float
    ell: float
    r: float
    r_lambda: float
    r_lambda_integral: bool
    lambda_q_exact: int | None = None
    lambda_q1_exact: int | None = None
    logs: dict = field(default_factory=dict)


def derive_scales(params: ParamSet, q: int) -> ScaleSet:
    if q < 0:
        raise ValueError("level q must be >= 0")
    L0 = log_lambda(params, q)
    L1 = log_lambda(params, q + 1)
    L2 = log_lambda(params, q + 2)
    lam_q = _exp(L0, q, "lambda_q", lambda_exact(params, q))
    lam_q1 = _exp(L1, q, "lambda_{q+1}", lambda_exact(params, q + 1))
    beta = params.beta
    exact1 = lambda_exact(params, q + 1)
    if exact1 is not None:
        root = integer_fourth_root(exact1)
        integral = root is not None
        r_lambda = float(root) if integral else exact1 ** 0.25
    else:
        integral = (params.b ** (q + 1)) % 4 == 0
        r_lambda = _exp(0.25 * L1, q, "r lambda")
    return ScaleSet(
        q=q,
        lambda_q=lam_q,
        lambda_q1=lam_q1,
        delta_q=math.exp(-2 * beta * L0),
        delta_q1=math.exp(-2 * beta * L1),
        delta_q2=math.exp(-2 * beta * L2),
        ell=math.exp(-params.eta * L1),
        r=math.exp(-0.75 * L1),
        r_lambda=r_lambda,
        r_lambda_integral=integral,
        lambda_q_exact=lambda_exact(params, q),
        lambda_q1_exact=exact1,
        logs={"lambda_q": L0, "lambda_q1": L1, "lambda_q2": L2},
    )


@dataclass(frozen=True)
class InequalityReport:
    name: str
    relation: str
    exponent_margin: float  # sign decides the asymptotic (symbolic) check
    log_margin: float  # natural log of (right side / left side) at the given a
    symbolic_pass: bool
    numeric_pass: bool
    note: str = ""

    def row(self):
        return [self.name, self.relation, f"{self.exponent_margin:.6g}", f"{self.log_margin:.6g}",
                "pass" if self.symbolic_pass else "FAIL", "pass" if self.numeric_pass else "FAIL"]


def validate_regime(params: ParamSet, q: int = 0) -> list[InequalityReport]:
    """One report per parameter inequality used in the construction.

    The exponent margin is the coefficient of log(lambda_{q+1}) in log(rhs/lhs);
    its sign is the asymptotic verdict. The log margin evaluates log(rhs/lhs)
    at the configured a, so a failing numeric margin at desk scale is reported
    rather than raised.
    """
    b, beta, eta = params.b, params.beta, params.eta
    L0 = log_lambda(params, q)
    L1 = log_lambda(params, q + 1)
    out = []

    def add(name, relation, coeff, log_val, note=""):
        out.append(InequalityReport(name, relation, coeff, log_val, coeff > 0, log_val > 0, note))

    c = eta - 2.0 / b - beta * b
    add("mollification", "ell << lambda_{q+1}^(-2/b - beta b)", c, c * L1)
    c = 0.25 - 65 * eta
    add("decorrelation", "ell^-65 << lambda_{q+1}^(1/4)", c, c * L1)
    add("intermittency_lower", "lambda_{q+1}^-1 << r", 0.25, 0.25 * L1)
    c = 0.75 - eta
    add("intermittency_upper", "r << ell", c, c * L1)
    c = 1.0 - 10 * eta
    add("mollified_frequency", "ell^-10 << lambda_{q+1}", c, c * L1)
    # 2 delta_{q+1}^{1/2} <= delta_q^{1/2}  <=>  beta (b - 1) log lambda_q >= log 2
    c = beta * (b - 1)
    add("amplitude_decay", "2 delta_{q+1}^(1/2) <= delta_q^(1/2)", c, c * L0 - math.log(2.0),
        "holds once a is large enough")
    c = eta * b - 2 - beta * b * b
    add("mollification_vs_growth", "eta b - 2 > beta b^2", c, c,
        "exponent-only condition")
    c = eta * b - 3
    out.append(InequalityReport("helicity_window", "eta b >= 3", c, c, c >= 0, c >= 0,
                                "exponent-only condition"))
    integral = (b ** (q + 1)) % 4 == 0
    exact1 = lambda_exact(params, q + 1)
    if exact1 is not None:
        integral = integer_fourth_root(exact1) is not None
    out.append(InequalityReport("r_lambda_integral", "r lambda_{q+1} in N", 1.0 if b % 4 == 0 else -1.0,
                                1.0 if integral else -1.0, b % 4 == 0, integral,
                                "b divisible by 4 makes every level integral"))
    return out


def format_reports(reports) -> str:
    head = ["inequality", "relation", "exponent_margin", "log_margin_at_a", "asymptotic", "at_a"]
    rows = [head] + [r.row() for r in reports]
    widths = [max(len(row[i]) for row in rows) for i in range(len(head))]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(row, widths)) for row in rows)


def block_scale(params: ParamSet, q: int):
    """(lambda, r, r_lambda) used to build blocks at step q -> q+1.

    With ``block_lambda`` unset this is (lambda_{q+1}, lambda_{q+1}^(-3/4)).
    A desk override keeps the coupling r = lambda^(-3/4), so the override
    must be a perfect fourth power for r lambda to be an integer. The
    override applies unchanged at every level.
    """
    if params.block_lambda is None:
        s = derive_scales(params, q)
        lam_exact = s.lambda_q1_exact
        if lam_exact is None or not s.r_lambda_integral:
            raise ValueError(f"lambda_{q + 1} has no integral r*lambda; set block_lambda")
        kappa = int(round(s.r_lambda))
        return float(lam_exact), kappa / float(lam_exact), kappa
    lam = int(params.block_lambda)
    kappa = integer_fourth_root(lam)
    if kappa is None:
        raise ValueError(f"block_lambda={lam} is not a fourth power, r*lambda would not be integral")
    return float(lam), kappa / float(lam), kappa
