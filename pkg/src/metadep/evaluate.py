"""Attachment scoring and the small statistics behind the result tables.

Scores are percentages on gold tokenization: UAS counts correct heads,
LAS additionally requires the dependency label to match. Significance
testing is a paired two-sided t-test with Bonferroni correction applied
as a corrected threshold (p < alpha / m is the same decision rule as
p * m < alpha). Rank correlation is Spearman with average ranks for ties
and the usual t approximation for its p-value.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field


# ---- attachment scoring ----

@dataclass
class EvalCounts:
    n_tokens: int = 0
    head_correct: int = 0
    both_correct: int = 0
    # gold relation -> [occurrences, head correct, head and label correct]
    per_relation: dict = field(default_factory=dict)

    def add_sentence(self, gold_heads, gold_labels, pred_heads, pred_labels) -> None:
        if not (len(gold_heads) == len(gold_labels) == len(pred_heads) == len(pred_labels)):
            raise ValueError("gold/prediction length mismatch")
        for gh, gl, ph, pl in zip(gold_heads, gold_labels, pred_heads, pred_labels):
            self.n_tokens += 1
            rel = self.per_relation.setdefault(gl, [0, 0, 0])
            rel[0] += 1
            if int(gh) == int(ph):
                self.head_correct += 1
                rel[1] += 1
                if gl == pl:
                    self.both_correct += 1
                    rel[2] += 1

    def merge(self, other: "EvalCounts") -> None:
        self.n_tokens += other.n_tokens
        self.head_correct += other.head_correct
        self.both_correct += other.both_correct
        for rel, counts in other.per_relation.items():
            mine = self.per_relation.setdefault(rel, [0, 0, 0])
            for i in range(3):
                mine[i] += counts[i]

    @property
    def uas(self) -> float:
        if self.n_tokens == 0:
            raise ValueError("no scorable tokens")
        return 100.0 * self.head_correct / self.n_tokens

    @property
    def las(self) -> float:
        if self.n_tokens == 0:
            raise ValueError("no scorable tokens")
        return 100.0 * self.both_correct / self.n_tokens


def score_sentences(pairs) -> EvalCounts:
    """pairs: iterable of (gold_heads, gold_labels, pred_heads, pred_labels)."""
    counts = EvalCounts()
    for gh, gl, ph, pl in pairs:
        counts.add_sentence(gh, gl, ph, pl)
    return counts


def score_treebank_pair(gold_tb, pred_tb) -> EvalCounts:
    """Score a predicted treebank against gold on identical tokenization."""
    if len(gold_tb.sentences) != len(pred_tb.sentences):
        raise ValueError(
            f"sentence count mismatch: gold {len(gold_tb.sentences)}, "
            f"predicted {len(pred_tb.sentences)}")
    counts = EvalCounts()
    for i, (g, p) in enumerate(zip(gold_tb.sentences, pred_tb.sentences)):
        if len(g) != len(p):
            raise ValueError(f"sentence {i}: token count mismatch "
                             f"({len(g)} vs {len(p)})")
        counts.add_sentence(g.heads(), g.deprels(), p.heads(), p.deprels())
    return counts


# ---- result records and aggregation ----

@dataclass
class EvalReport:
    language: str
    model: str
    support_size: int
    repetition: int
    seed: int
    las: float
    uas: float
    per_relation: dict = field(default_factory=dict)


@dataclass
class GroupStat:
    language: str
    model: str
    support_size: int
    n: int
    mean_las: float
    std_las: float
    mean_uas: float


def _sample_std(values) -> float:
    n = len(values)
    if n < 2:
        return 0.0
    m = sum(values) / n
    return math.sqrt(sum((v - m) ** 2 for v in values) / (n - 1))


def aggregate(reports) -> list:
    """Group by (language, model, support size); mean and sample std of LAS."""
    groups = defaultdict(list)
    for r in reports:
        groups[(r.language, r.model, r.support_size)].append(r)
    out = []
    for (lang, model, size) in sorted(groups):
        rs = groups[(lang, model, size)]
        las = [r.las for r in rs]
        uas = [r.uas for r in rs]
        out.append(GroupStat(language=lang, model=model, support_size=size,
                             n=len(rs), mean_las=sum(las) / len(las),
                             std_las=_sample_std(las),
                             mean_uas=sum(uas) / len(uas)))
    return out


def per_seed_means(reports, metric: str = "las") -> dict:
    """(language, model, support size) -> {seed: mean over repetitions}.

    Repetitions are averaged within a seed first so that cross-model tests
    pair scores by seed.
    """
    acc = defaultdict(lambda: defaultdict(list))
    for r in reports:
        acc[(r.language, r.model, r.support_size)][r.seed].append(getattr(r, metric))
    return {key: {seed: sum(v) / len(v) for seed, v in seeds.items()}
            for key, seeds in acc.items()}


# ---- regularized incomplete beta, for t-distribution tails ----

def _betacf(a: float, b: float, x: float) -> float:
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 3e-14:
            break
    return h


def reg_inc_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) by continued fraction, accurate to ~1e-13."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log(1.0 - x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, df: int) -> float:
    """P(|T_df| >= |t|) via the incomplete beta identity."""
    if df < 1:
        raise ValueError(f"degrees of freedom must be >= 1, got {df}")
    if math.isinf(t):
        return 0.0
    x = df / (df + t * t)
    return reg_inc_beta(df / 2.0, 0.5, x)


# ---- paired t-test ----

@dataclass
class TTestResult:
    t: float
    p: float
    df: int
    mean_diff: float
    note: str = ""


def paired_ttest(xs, ys) -> TTestResult:
    """Two-sided paired t-test on equal-length score sequences.

    Zero-variance differences are decided exactly: all-zero differences
    give p = 1; identical nonzero differences give p = 0 with a note.
    """
    xs, ys = list(xs), list(ys)
    if len(xs) != len(ys):
        raise ValueError(f"paired samples differ in length: {len(xs)} vs {len(ys)}")
    n = len(xs)
    if n < 2:
        raise ValueError("paired t-test needs at least two pairs")
    diffs = [x - y for x, y in zip(xs, ys)]
    mean = sum(diffs) / n
    sd = _sample_std(diffs)
    df = n - 1
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(t=0.0, p=1.0, df=df, mean_diff=0.0,
                               note="all differences zero")
        t = math.copysign(math.inf, mean)
        return TTestResult(t=t, p=0.0, df=df, mean_diff=mean,
                           note="zero-variance nonzero differences; exact decision")
    t = mean / (sd / math.sqrt(n))
    return TTestResult(t=t, p=t_two_sided_p(t, df), df=df, mean_diff=mean)


def bonferroni_threshold(alpha: float, n_comparisons: int) -> float:
    """Corrected threshold: reject iff p < alpha / m (same as p * m < alpha)."""
    if n_comparisons < 1:
        raise ValueError("need at least one comparison")
    return alpha / n_comparisons


@dataclass
class SignTestResult:
    wins: int
    losses: int
    ties: int
    p: float


def sign_test_one_sided(diffs) -> SignTestResult:
    """Exact binomial tail for H1: positive differences dominate.

    Ties are dropped (the standard convention); p = P(X >= wins) under
    Binomial(wins + losses, 1/2).
    """
    diffs = list(diffs)
    wins = sum(1 for d in diffs if d > 0)
    losses = sum(1 for d in diffs if d < 0)
    ties = len(diffs) - wins - losses
    n = wins + losses
    if n == 0:
        return SignTestResult(wins=0, losses=0, ties=ties, p=1.0)
    tail = sum(math.comb(n, i) for i in range(wins, n + 1)) / 2.0 ** n
    return SignTestResult(wins=wins, losses=losses, ties=ties, p=tail)


# ---- Spearman rank correlation ----

def _average_ranks(values) -> list:
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2.0 + 1.0  # ranks are 1-based
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


@dataclass
class SpearmanResult:
    rho: float
    p: float
    n: int


def spearman(xs, ys) -> SpearmanResult:
    """Spearman rho with average ranks for ties; p from the t approximation."""
    xs, ys = list(xs), list(ys)
    if len(xs) != len(ys):
        raise ValueError(f"sequences differ in length: {len(xs)} vs {len(ys)}")
    n = len(xs)
    if n < 3:
        raise ValueError("spearman needs at least three points")
    if len(set(xs)) == 1 or len(set(ys)) == 1:
        raise ValueError("spearman is undefined for a constant sequence")
    rx = _average_ranks(xs)
    ry = _average_ranks(ys)
    mx = sum(rx) / n
    my = sum(ry) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    vx = sum((a - mx) ** 2 for a in rx)
    vy = sum((b - my) ** 2 for b in ry)
    rho = cov / math.sqrt(vx * vy)
    if abs(rho) >= 1.0 - 1e-15:
        return SpearmanResult(rho=max(-1.0, min(1.0, rho)), p=0.0, n=n)
    t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
    return SpearmanResult(rho=rho, p=t_two_sided_p(t, n - 2), n=n)
