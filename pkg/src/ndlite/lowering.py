"""Compile a fully quantized model into a Boolean/addition/indicator program.

Every ternary channel becomes index sets P (code +1) and N (code -1) plus an
integer threshold: the channel output is I(S_P - S_N > theta) xor flip.
Thresholds come from folding the layer's batchnorm (or dense bias) in exact
rational arithmetic; because the accumulator is an integer, rounding the
real decision boundary to an integer threshold never changes any output.
The residual skip is pure additions: block-input bits join the second
conv's accumulator. The antisymmetric output pair folds to one channel
compared against the decision threshold's log-odds; if the rows are not
exact negations the fold is refused and both accumulators are compared
directly. run_program evaluates everything in integer arithmetic only.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import nn
from .model import Model, exact_bit_forward
from .quant import extract_ternary

INPUT_CHANNEL_NAMES = ("C_l", "C_r", "C_l'", "C_r'")


# -------------------------------------------------------------------- types

@dataclass
class ChannelProgram:
    p: tuple  # conv: ((in_ch, k1, k2), ...); dense: (flat_index, ...)
    n: tuple
    theta: int = 0
    flip: bool = False
    const: int | None = None  # constant-output channel; p/n are empty

    def __post_init__(self):
        if self.const is not None and (self.p or self.n):
            raise ValueError("constant channels carry no index sets")
        if set(self.p) & set(self.n):
            raise ValueError("P and N must be disjoint")

    @property
    def fan_in(self):
        return len(self.p) + len(self.n)

    @property
    def live(self):
        return self.const is None and self.fan_in > 0


@dataclass
class LayerProgram:
    name: str
    kind: str  # "conv" | "dense"
    in_width: int  # conv: input channels; dense: flattened input width
    kernel: tuple | None  # (kh, kw) for conv
    channels: list
    skip_from: str | None = None  # layer whose output bits join the sums
    decision: str | None = None  # output layer: "folded" | "compare"
    compare_theta: int | None = None  # compare: label = I(S[1]-S[0] > this)


@dataclass
class BooleanProgram:
    group_size: int
    layers: list
    warnings: list = field(default_factory=list)

    def layer(self, name):
        for lp in self.layers:
            if lp.name == name:
                return lp
        raise KeyError(name)


# ------------------------------------------------------------------ folding

def _frac(x):
    return Fraction(float(x))


def fold_batchnorm(bn: nn.BnState, delta):
    """Per-channel ('ind', theta, flip) or ('const', bit).

    Rewrites gamma*(delta*S - mu)/sigma + beta > 0 as S > theta (gamma > 0)
    or as not(S > theta) (gamma < 0), with sigma pinned to its float64
    value; exact over integer S.
    """
    out = []
    dlt = _frac(delta)
    for c in range(len(bn.gamma)):
        gam = _frac(bn.gamma[c])
        bet = _frac(bn.beta[c])
        mu = _frac(bn.running_mean[c])
        sig = _frac(nn.bn_sigma(bn.running_var[c], bn.eps))
        if gam == 0:
            out.append(("const", 1 if bet > 0 else 0))
            continue
        t = (mu - bet * sig / gam) / dlt
        if gam > 0:
            out.append(("ind", math.floor(t), False))
        else:
            out.append(("ind", math.ceil(t) - 1, True))
    return out


def fold_bias(bias, delta):
    """Dense channels: delta*S + b > 0 becomes S > floor(-b/delta)."""
    dlt = _frac(delta)
    return [("ind", math.floor(-_frac(b) / dlt), False) for b in bias]


def _positions(codes_row):
    """codes_row any-rank -> (P, N) index tuples in C order."""
    if codes_row.ndim == 1:
        p = tuple(int(i) for i in np.flatnonzero(codes_row == 1))
        n = tuple(int(i) for i in np.flatnonzero(codes_row == -1))
    else:
        p = tuple(map(tuple, np.argwhere(codes_row == 1).tolist()))
        n = tuple(map(tuple, np.argwhere(codes_row == -1).tolist()))
    return p, n


def lower_layer(ternary, bn=None, bias=None, theta_mode="folded"):
    """ChannelPrograms for one ternary layer.

    Conv codes are [out_ch, in_ch, kh, kw]; dense codes are [in, out]
    (channel c is column c). theta_mode "zero" skips folding and emits the
    literal I(S > 0) convention.
    """
    if theta_mode not in ("folded", "zero"):
        raise ValueError(f"unknown theta mode {theta_mode!r}")
    codes = ternary.codes
    conv = codes.ndim == 4
    n_ch = codes.shape[0] if conv else codes.shape[1]
    if theta_mode == "zero":
        folds = [("ind", 0, False)] * n_ch
    elif bn is not None:
        folds = fold_batchnorm(bn, ternary.delta)
    elif bias is not None:
        folds = fold_bias(bias, ternary.delta)
    else:
        folds = [("ind", 0, False)] * n_ch

    channels = []
    for c in range(n_ch):
        row = codes[c] if conv else codes[:, c]
        p, n = _positions(row)
        fold = folds[c]
        if fold[0] == "const":
            channels.append(ChannelProgram(p=(), n=(), const=fold[1]))
        elif not p and not n:
            # Dead channel: S is identically 0, so the indicator is constant.
            bit = int((0 > fold[1]) ^ fold[2])
            channels.append(ChannelProgram(p=(), n=(), const=bit))
        else:
            channels.append(ChannelProgram(p=p, n=n, theta=fold[1],
                                           flip=fold[2]))
    return channels


def fold_output_pair(ternary, bias, mode="threshold", threshold=0.505):
    """Fold the 2-channel output into one channel, or refuse.

    Requires the columns to be exact elementwise negations. The folded
    channel fires "real": with antisymmetric rows the logit difference is
    2*delta*S_real + (b1 - b0), compared >= log(t/(1-t)) in threshold mode
    or > 0 in argmax mode. Returns (ChannelProgram | None).
    """
    codes = ternary.codes
    if codes.ndim != 2 or codes.shape[1] != 2:
        raise ValueError("output fold expects a dense [in, 2] layer")
    if not np.array_equal(codes[:, 1], -codes[:, 0]):
        return None
    p, n = _positions(codes[:, 1])
    dlt = _frac(ternary.delta)
    db = _frac(bias[1]) - _frac(bias[0])
    if mode == "threshold":
        if not 0.0 < threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        level = _frac(math.log(threshold / (1.0 - threshold)))
        # label = [2*delta*S + db >= level] = [S > ceil((level-db)/2delta)-1]
        theta = math.ceil((level - db) / (2 * dlt)) - 1
    elif mode == "argmax":
        # label = [2*delta*S + db > 0]; ties resolve to random, like argmax
        # picking the first (random) class.
        theta = math.floor(-db / (2 * dlt))
    else:
        raise ValueError(f"unknown output fold mode {mode!r}")
    if not p and not n:
        return ChannelProgram(p=(), n=(), const=int((0 > theta)))
    return ChannelProgram(p=p, n=n, theta=theta, flip=False)


def _compare_theta(ternary, bias, mode, threshold):
    """Integer theta for the unfolded decision I(S1 - S0 > theta)."""
    dlt = _frac(ternary.delta)
    db = _frac(bias[1]) - _frac(bias[0])
    if mode == "threshold":
        level = _frac(math.log(threshold / (1.0 - threshold)))
        return math.ceil((level - db) / dlt) - 1
    return math.floor(-db / dlt)


def lower_model(model: Model, theta_mode="folded", fold_output=True,
                output_mode="threshold") -> BooleanProgram:
    """Compile a full-stage model into a BooleanProgram."""
    if model.stage != "full":
        raise ValueError("lowering requires a fully quantized (full-stage) model")
    if output_mode not in ("threshold", "argmax"):
        raise ValueError(f"unknown output fold mode {output_mode!r}")

    def tern(name):
        return extract_ternary(model._weight_of(name), model.delta_of(name))

    layers = []
    warnings = []
    c = model.cfg.channels
    layers.append(LayerProgram(
        name="conv0", kind="conv", in_width=4, kernel=(1, 1),
        channels=lower_layer(tern("conv0"), bn=model.bn0,
                             theta_mode=theta_mode)))
    prev = "conv0"
    for i, blk in enumerate(model.blocks):
        layers.append(LayerProgram(
            name=f"res{i}.c1", kind="conv", in_width=c, kernel=(3, 3),
            channels=lower_layer(tern(f"res{i}.c1"), bn=blk.bn1,
                                 theta_mode=theta_mode)))
        layers.append(LayerProgram(
            name=f"res{i}.c2", kind="conv", in_width=c, kernel=(3, 3),
            channels=lower_layer(tern(f"res{i}.c2"), bn=blk.bn2,
                                 theta_mode=theta_mode),
            skip_from=prev))
        prev = f"res{i}.c2"

    flat = model.cfg.flatten_width
    layers.append(LayerProgram(
        name="dense1", kind="dense", in_width=flat, kernel=None,
        channels=lower_layer(tern("dense1"), bias=model.d1_b,
                             theta_mode=theta_mode)))
    layers.append(LayerProgram(
        name="dense2", kind="dense", in_width=model.cfg.dense_sizes[0],
        kernel=None,
        channels=lower_layer(tern("dense2"), bias=model.d2_b,
                             theta_mode=theta_mode)))

    out_t = tern("out")
    thr = model.cfg.decision_threshold
    folded = fold_output_pair(out_t, model.out_b, mode=output_mode,
                              threshold=thr) if fold_output else None
    in_w = model.cfg.dense_sizes[1]
    if folded is not None:
        layers.append(LayerProgram(name="out", kind="dense", in_width=in_w,
                                   kernel=None, channels=[folded],
                                   decision="folded"))
    else:
        if fold_output:
            warnings.append("output rows are not antisymmetric; emitting "
                            "both channels with a compare decision")
        raw = [ChannelProgram(p=p, n=n)
               for p, n in (_positions(out_t.codes[:, k]) for k in (0, 1))]
        layers.append(LayerProgram(
            name="out", kind="dense", in_width=in_w, kernel=None,
            channels=raw, decision="compare",
            compare_theta=_compare_theta(out_t, model.out_b, output_mode, thr)))
    return BooleanProgram(group_size=model.cfg.group_size, layers=layers,
                          warnings=warnings)


# ---------------------------------------------------------------- execution

def _check_bits(bits, group_size):
    bits = np.asarray(bits)
    single = bits.ndim == 3
    if single:
        bits = bits[None]
    if bits.ndim != 4 or bits.shape[1:] != (4, 16, group_size):
        raise ValueError(f"input shape {bits.shape} does not match layout "
                         f"(4, 16, {group_size})")
    b = bits.astype(np.uint8)
    if bits.size and (not np.array_equal(b, bits) or b.max() > 1):
        raise ValueError("program inputs must be binary")
    return b, single


def _layer_kernel(layer):
    kh, kw = layer.kernel
    k = np.zeros((len(layer.channels), layer.in_width, kh, kw), dtype=np.int32)
    for o, cp in enumerate(layer.channels):
        for (ci, u, v) in cp.p:
            k[o, ci, u, v] = 1
        for (ci, u, v) in cp.n:
            k[o, ci, u, v] = -1
    return k


def _dense_matrix(layer):
    m = np.zeros((layer.in_width, len(layer.channels)), dtype=np.int32)
    for o, cp in enumerate(layer.channels):
        for i in cp.p:
            m[i, o] = 1
        for i in cp.n:
            m[i, o] = -1
    return m


def _apply_indicators(s, channels):
    out = np.empty(s.shape, dtype=np.uint8)
    for o, cp in enumerate(channels):
        if cp.const is not None:
            out[:, o] = cp.const
        else:
            out[:, o] = (s[:, o] > cp.theta) ^ cp.flip
    return out


def run_program(prog: BooleanProgram, bits, return_planes=False):
    """Evaluate the program on [N,4,16,g] (or single [4,16,g]) bit inputs.

    Integer arithmetic only. Returns labels (uint8), plus named intermediate
    bit planes when requested.
    """
    bits, single = _check_bits(bits, prog.group_size)
    n = bits.shape[0]
    planes = []
    outputs = {}  # layer name -> bit planes, for skip sources
    h = bits.astype(np.int32)
    labels = None
    for layer in prog.layers:
        if layer.kind == "conv":
            kh, kw = layer.kernel
            if h.shape[1] != layer.in_width:
                raise ValueError(f"{layer.name}: expected {layer.in_width} "
                                 f"input channels, got {h.shape[1]}")
            cols = nn._im2col(h, kh, kw, kh // 2, kw // 2)
            kmat = _layer_kernel(layer).reshape(len(layer.channels), -1)
            s = np.matmul(kmat[None], cols).reshape(
                n, len(layer.channels), 16, prog.group_size)
            if layer.skip_from is not None:
                s = s + outputs[layer.skip_from].astype(np.int32)
            out = _apply_indicators(
                s.reshape(n, len(layer.channels), -1), layer.channels
            ).reshape(s.shape)
        else:
            x = h.reshape(n, -1)
            if x.shape[1] != layer.in_width:
                raise ValueError(f"{layer.name}: expected input width "
                                 f"{layer.in_width}, got {x.shape[1]}")
            s = x @ _dense_matrix(layer)
            if layer.decision == "compare":
                d = s[:, 1] - s[:, 0]
                labels = (d > layer.compare_theta).astype(np.uint8)
                planes.append((layer.name + ".sum_diff", d))
                break
            out = _apply_indicators(s, layer.channels)
            if layer.decision == "folded":
                labels = out[:, 0]
        outputs[layer.name] = out
        planes.append((layer.name, out))
        h = out.astype(np.int32)
    if labels is None:
        raise ValueError("program has no decision layer")
    if single:
        labels = labels[0]
    if return_planes:
        return labels, planes
    return labels


# -------------------------------------------------------------- equivalence

@dataclass
class VerifyReport:
    passed: bool
    trials_run: int
    exhaustive_channels: int
    counterexample: dict | None = None
    warnings: list = field(default_factory=list)


def _model_channel_coeffs(model, layer_name, channel, folded_output=False):
    """(index -> ternary coefficient) for one model channel."""
    t = extract_ternary(model._weight_of(layer_name),
                        model.delta_of(layer_name))
    if folded_output:
        channel = 1  # folded channel is the real-class column
    row = t.codes[channel] if t.codes.ndim == 4 else t.codes[:, channel]
    coeffs = {}
    if row.ndim == 1:
        for i in np.flatnonzero(row):
            coeffs[int(i)] = int(row[i])
    else:
        for idx in np.argwhere(row != 0):
            coeffs[tuple(int(v) for v in idx)] = int(row[tuple(idx)])
    return coeffs


def _exhaustive_channel(model, prog, layer, channel_idx, width):
    """Compare one indicator channel against the model's batchnorm/bias
    predicate over every assignment of its support bits. Returns a
    counterexample dict or None; raises ValueError when the support is
    wider than `width`."""
    cp = layer.channels[channel_idx]
    coeffs = _model_channel_coeffs(model, layer.name, channel_idx,
                                   folded_output=layer.decision == "folded")
    support = sorted(set(coeffs) | set(cp.p) | set(cp.n))
    # The model's second residual conv always carries the identity skip;
    # include the skip bit whenever either side uses it so a dropped or
    # spurious skip flag shows up as a mismatch.
    model_skip = layer.name.endswith(".c2")
    prog_skip = layer.skip_from is not None
    has_skip = model_skip or prog_skip
    k = len(support) + (1 if has_skip else 0)
    if k > width:
        raise ValueError("support too wide")

    prog_coeff = np.zeros(k, dtype=np.int64)
    model_coeff = np.zeros(k, dtype=np.int64)
    for j, idx in enumerate(support):
        model_coeff[j] = coeffs.get(idx, 0)
        prog_coeff[j] = (1 if idx in cp.p else 0) - (1 if idx in cp.n else 0)
    if has_skip:
        prog_coeff[-1] = 1 if prog_skip else 0
        model_coeff[-1] = 1 if model_skip else 0

    assign = np.array(list(itertools.product((0, 1), repeat=k)), dtype=np.int64)
    s_prog = assign @ prog_coeff
    s_model = assign @ model_coeff

    if cp.const is not None:
        prog_bits = np.full(len(assign), cp.const, dtype=np.uint8)
    else:
        prog_bits = ((s_prog > cp.theta) ^ cp.flip).astype(np.uint8)
    model_bits = _model_predicate_bits(model, layer, channel_idx, s_model)
    bad = np.nonzero(prog_bits != model_bits)[0]
    if len(bad):
        i = int(bad[0])
        return {"layer": layer.name, "channel": channel_idx,
                "support": support + (["skip"] if has_skip else []),
                "assignment": assign[i].tolist(),
                "program_bit": int(prog_bits[i]), "model_bit": int(model_bits[i])}
    return None


def _model_predicate_bits(model, layer, channel_idx, s_values):
    """Exact model-side indicator for integer accumulator values."""
    delta = model.delta_of(layer.name)
    dlt = _frac(delta)
    if layer.kind == "conv":
        bn = _bn_of(model, layer.name)
        gam = _frac(bn.gamma[channel_idx])
        bet = _frac(bn.beta[channel_idx])
        mu = _frac(bn.running_mean[channel_idx])
        sig = _frac(nn.bn_sigma(bn.running_var[channel_idx], bn.eps))
        return np.array([int(gam * (dlt * int(s) - mu) + bet * sig > 0)
                         for s in s_values], dtype=np.uint8)
    if layer.name == "out":
        thr = model.cfg.decision_threshold
        level = _frac(math.log(thr / (1.0 - thr)))
        db = _frac(model.out_b[1]) - _frac(model.out_b[0])
        return np.array([int(2 * dlt * int(s) + db >= level)
                         for s in s_values], dtype=np.uint8)
    bias = {"dense1": model.d1_b, "dense2": model.d2_b}[layer.name]
    b = _frac(bias[channel_idx])
    return np.array([int(dlt * int(s) + b > 0) for s in s_values],
                    dtype=np.uint8)


def _bn_of(model, layer_name):
    if layer_name == "conv0":
        return model.bn0
    i = int(layer_name[3:layer_name.index(".")])
    blk = model.blocks[i]
    return blk.bn1 if layer_name.endswith("c1") else blk.bn2


def verify_equivalence(prog: BooleanProgram, model: Model, trials=10_000,
                       exhaustive_width=9, seed=0, batch=2048) -> VerifyReport:
    """Randomized whole-network trials plus exhaustive per-channel sweeps.

    Random inputs are compared end to end (program labels and every
    intermediate plane against the exact model evaluation). Channels whose
    support spans at most exhaustive_width bits are additionally checked on
    every assignment of those bits.
    """
    warnings = []
    if trials == 0 and exhaustive_width == 0:
        warnings.append("no trials and no exhaustive width: vacuous pass")
        return VerifyReport(passed=True, trials_run=0, exhaustive_channels=0,
                            warnings=warnings)

    # Folded output theta depends on the chosen decision rule; note when the
    # program was built with a rule other than the model's threshold.
    rng = np.random.default_rng(seed)
    done = 0
    while done < trials:
        nb = min(batch, trials - done)
        bits = rng.integers(0, 2, size=(nb, 4, 16, prog.group_size),
                            dtype=np.uint8)
        prog_labels, prog_planes = run_program(prog, bits, return_planes=True)
        model_labels, _, model_planes = exact_bit_forward(model, bits,
                                                          return_planes=True)
        # Each named intermediate plane must match, not just the labels:
        # exactness is layerwise, and a masked divergence is still a bug.
        model_by_name = dict(model_planes)
        diff = prog_labels != model_labels
        for name, plane in prog_planes:
            if name in model_by_name:
                diff = diff | (plane != model_by_name[name]).reshape(
                    nb, -1).any(axis=1)
        if diff.any():
            i = int(np.nonzero(diff)[0][0])
            mism = _first_plane_mismatch(prog_planes, model_planes, i)
            return VerifyReport(
                passed=False, trials_run=done + nb, exhaustive_channels=0,
                counterexample={"input": bits[i], "trial": done + i,
                                "first_divergence": mism,
                                "program_label": int(prog_labels[i]),
                                "model_label": int(model_labels[i])},
                warnings=warnings)
        done += nb

    checked = 0
    for layer in prog.layers:
        if layer.decision == "compare":
            continue
        for ci in range(len(layer.channels)):
            try:
                ce = _exhaustive_channel(model, prog, layer, ci,
                                         exhaustive_width)
            except ValueError:
                continue
            checked += 1
            if ce is not None:
                return VerifyReport(passed=False, trials_run=done,
                                    exhaustive_channels=checked,
                                    counterexample=ce, warnings=warnings)
    return VerifyReport(passed=True, trials_run=done,
                        exhaustive_channels=checked, warnings=warnings)


def _first_plane_mismatch(prog_planes, model_planes, i):
    model_by_name = dict(model_planes)
    for name, plane in prog_planes:
        if name in model_by_name and not np.array_equal(
                plane[i], model_by_name[name][i]):
            return name
    return "output"


# ------------------------------------------------------------- expressions

@dataclass
class BooleanExpr:
    variables: tuple  # literal names, P entries first, then N entries
    terms: tuple  # tuple of products; each product is ((var, polarity), ...)
    formula: str  # rendered two-level form

    def evaluate(self, assignment):
        if self.formula == "1":
            return 1
        for term in self.terms:
            if all(assignment[v] == int(pol) for v, pol in term):
                return 1
        return 0


def _merge(a, b):
    """Combine two implicants differing in exactly one cared bit."""
    (va, dca), (vb, dcb) = a, b
    if dca != dcb:
        return None
    diff = va ^ vb
    if diff and not (diff & (diff - 1)):
        return (va & ~diff, dca | diff)
    return None


def _prime_implicants(minterms):
    current = {(m, 0) for m in minterms}
    primes = set()
    while current:
        merged = set()
        used = set()
        for a, b in itertools.combinations(sorted(current), 2):
            m = _merge(a, b)
            if m is not None:
                merged.add(m)
                used.add(a)
                used.add(b)
        primes |= current - used
        current = merged
    return primes


def _covers(imp, minterm):
    value, dc = imp
    return (minterm & ~dc) == value


def _petrick_min_cover(primes, minterms, n_vars):
    """Smallest cover (fewest terms, then fewest literals)."""
    primes = sorted(primes)
    covers = {m: frozenset(i for i, p in enumerate(primes) if _covers(p, m))
              for m in minterms}
    # Product of sums over minterms, expanded with subsumption pruning.
    products = {frozenset()}
    for m in minterms:
        nxt = set()
        for prod in products:
            for i in covers[m]:
                nxt.add(prod | {i})
        pruned = set()
        for cand in sorted(nxt, key=len):
            if not any(kept <= cand for kept in pruned):
                pruned.add(cand)
        products = pruned

    mask = (1 << n_vars) - 1

    def cost(sel):
        return (len(sel),
                sum(bin(~primes[i][1] & mask).count("1") for i in sel))

    best = min(products, key=lambda sel: (cost(sel), sorted(sel)))
    return [primes[i] for i in sorted(best)]


def synthesize_expression(cp: ChannelProgram, names=None, max_literals=8):
    """Minimal two-level formula for one channel via its truth table."""
    if cp.const is not None:
        return BooleanExpr(variables=(), terms=(),
                           formula=str(cp.const))
    n = cp.fan_in
    if n > max_literals:
        raise ValueError(f"fan-in {n} exceeds the {max_literals}-literal limit")
    if names is None:
        names = [f"x{i}" for i in range(n)]
    if len(names) != n:
        raise ValueError("need one name per P then N entry")
    npos = len(cp.p)
    minterms = []
    for m in range(1 << n):
        bits = [(m >> i) & 1 for i in range(n)]
        s = sum(bits[:npos]) - sum(bits[npos:])
        if (s > cp.theta) ^ cp.flip:
            minterms.append(m)
    if not minterms:
        return BooleanExpr(variables=tuple(names), terms=(), formula="0")
    if len(minterms) == 1 << n:
        return BooleanExpr(variables=tuple(names), terms=((),), formula="1")

    primes = _prime_implicants(minterms)
    cover = _petrick_min_cover(primes, minterms, n)
    terms = []
    for value, dc in cover:
        term = tuple((names[i], bool((value >> i) & 1))
                     for i in range(n) if not (dc >> i) & 1)
        terms.append(term)
    terms.sort(key=lambda t: (len(t), t))
    rendered = " | ".join(
        " & ".join(("" if pol else "~") + v for v, pol in term)
        if term else "1"
        for term in terms)
    return BooleanExpr(variables=tuple(names), terms=tuple(terms),
                       formula=rendered)


def conv0_literal_names(cp: ChannelProgram):
    """Input-channel names for a 1x1 first-layer channel's P then N entries."""
    return [INPUT_CHANNEL_NAMES[c] for (c, _, _) in list(cp.p) + list(cp.n)]


def program_expressions(prog: BooleanProgram, max_literals=8):
    """[(layer, channel, formula)] for every small-fan-in live channel."""
    out = []
    for layer in prog.layers:
        if layer.decision == "compare":
            continue
        for ci, cp in enumerate(layer.channels):
            if cp.const is not None or cp.fan_in > max_literals:
                continue
            if layer.name == "conv0" and layer.kernel == (1, 1):
                names = conv0_literal_names(cp)
            else:
                names = None
            expr = synthesize_expression(cp, names=names,
                                         max_literals=max_literals)
            out.append((layer.name, ci, expr.formula))
    return out


# -------------------------------------------------------------- persistence

def _fmt_indices(entries):
    if not entries:
        return "[]"
    if isinstance(entries[0], tuple):
        return "[" + ",".join(f"({a},{b},{c})" for a, b, c in entries) + "]"
    return "[" + ",".join(str(i) for i in entries) + "]"


def save_program(prog: BooleanProgram, path, max_literals=8):
    lines = [f"BPROG v1 layout=4x16x{prog.group_size} layers={len(prog.layers)}"]
    for w in prog.warnings:
        lines.append(f"# warning: {w}")
    for layer in prog.layers:
        head = (f"LAYER name={layer.name} kind={layer.kind} "
                f"in={layer.in_width} channels={len(layer.channels)}")
        if layer.kernel:
            head += f" kernel={layer.kernel[0]}x{layer.kernel[1]}"
        if layer.skip_from:
            head += f" skip={layer.skip_from}"
        if layer.decision:
            head += f" decision={layer.decision}"
        if layer.compare_theta is not None:
            head += f" compare_theta={layer.compare_theta}"
        lines.append(head)
        for ci, cp in enumerate(layer.channels):
            if cp.const is not None:
                lines.append(f"IND ch={ci} const={cp.const}")
            elif layer.decision == "compare":
                lines.append(f"ACC ch={ci} P={_fmt_indices(cp.p)} "
                             f"N={_fmt_indices(cp.n)}")
            else:
                lines.append(f"IND ch={ci} theta={cp.theta} "
                             f"flip={int(cp.flip)} P={_fmt_indices(cp.p)} "
                             f"N={_fmt_indices(cp.n)}")
    lines.append("EXPR")
    for lname, ci, formula in program_expressions(prog, max_literals):
        lines.append(f"{lname} ch={ci}: {formula}")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


_TUPLE_RE = re.compile(r"\((\d+),(\d+),(\d+)\)")


def _parse_indices(text):
    body = text[1:-1]
    if not body:
        return ()
    if body.startswith("("):
        return tuple((int(a), int(b), int(c))
                     for a, b, c in _TUPLE_RE.findall(body))
    return tuple(int(v) for v in body.split(","))


def _parse_kv(parts):
    return dict(p.split("=", 1) for p in parts)


def load_program(path) -> BooleanProgram:
    with open(path, "r", encoding="utf-8") as f:
        lines = [ln.rstrip("\n") for ln in f]
    if not lines or not lines[0].startswith("BPROG v1 "):
        raise ValueError(f"{path}: not a BPROG v1 file")
    head = _parse_kv(lines[0].split()[2:])
    layout = head["layout"].split("x")
    if layout[:2] != ["4", "16"]:
        raise ValueError(f"{path}: unsupported layout {head['layout']}")
    prog = BooleanProgram(group_size=int(layout[2]), layers=[])
    layer = None
    for ln in lines[1:]:
        if not ln or ln.startswith("#"):
            if ln.startswith("# warning: "):
                prog.warnings.append(ln[len("# warning: "):])
            continue
        if ln == "EXPR":
            break
        kind, rest = ln.split(" ", 1)
        kv = _parse_kv(rest.split(" "))
        if kind == "LAYER":
            kernel = None
            if "kernel" in kv:
                kh, kw = kv["kernel"].split("x")
                kernel = (int(kh), int(kw))
            layer = LayerProgram(
                name=kv["name"], kind=kv["kind"], in_width=int(kv["in"]),
                kernel=kernel, channels=[], skip_from=kv.get("skip"),
                decision=kv.get("decision"),
                compare_theta=int(kv["compare_theta"])
                if "compare_theta" in kv else None)
            prog.layers.append(layer)
        elif kind in ("IND", "ACC"):
            if layer is None:
                raise ValueError(f"{path}: channel line before any LAYER")
            if "const" in kv:
                cp = ChannelProgram(p=(), n=(), const=int(kv["const"]))
            else:
                cp = ChannelProgram(
                    p=_parse_indices(kv["P"]), n=_parse_indices(kv["N"]),
                    theta=int(kv.get("theta", 0)),
                    flip=bool(int(kv.get("flip", 0))))
            layer.channels.append(cp)
        else:
            raise ValueError(f"{path}: unknown line kind {kind!r}")
    if not prog.layers:
        raise ValueError(f"{path}: no layers")
    return prog
