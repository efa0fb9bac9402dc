"""Command line: ``veinlab vein|flow|construct|verify|check-reduction``.

Exit codes: 0 success, 1 bad input, 2 a refuted verdict (or failed round
trip), 3 a budget ran out before an answer was found.
"""
from __future__ import annotations

import argparse
import json
import sys

from . import predicates as P
from .construction import build_T, check_all, check_requirement_N, final_image, run_construction
from .factory import FlowRegistry
from .flow import (BudgetExhausted, StagePoint, Undefined, default_budget, eval_flow, initial_state,
                   _advance)
from .formats import FormatError, format_flow_text, read_flow, read_registry, read_tree
from .reductions import PointFiber, Verdict, check_cowadge, check_weihrauch, summarize
from .tree_core import format_path
from .vein import (INF, VeinError, closure, concat, double_prime, format_vein, increment_fin,
                   increment_inf, normalize, parse_vein, preset_chain, prime, replacement, tree_of)

EXIT_OK, EXIT_INPUT, EXIT_REFUTED, EXIT_BUDGET = 0, 1, 2, 3


class InputError(Exception):
    pass


def _read(path: str) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None


def _point(text: str) -> StagePoint:
    try:
        return StagePoint.parse(text)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _points(text: str) -> list:
    return [_point(p) for p in text.split(";") if p.strip()]


# vein ---------------------------------------------------------------------------------

def _vein_input(args):
    if args.vein is not None:
        return parse_vein(args.vein)
    if args.infile is not None:
        return parse_vein(_read(args.infile))
    raise InputError("give a vein with --vein TEXT or --in FILE")


def _int_arg(op: str, arg: str) -> int:
    if not arg.strip().isdigit():
        raise InputError(f"operation {op!r} needs a natural number argument")
    return int(arg)


def apply_ops(v, chain: str):
    """Apply ``op[ arg];op[ arg];...`` left to right; returns a vein or, for
    a final ``tree-of``, the labeled tree."""
    ops = [o.strip() for o in chain.split(";") if o.strip()]
    out = v
    for k, op in enumerate(ops):
        name, _, arg = op.partition(" ")
        if name == "tree-of":
            if k != len(ops) - 1:
                raise InputError("tree-of must be the last operation")
            return tree_of(out)
        if name == "normalize":
            out = normalize(out)
        elif name == "closure":
            out = closure(out)
        elif name == "prime":
            out = prime(out)
        elif name == "double-prime":
            out = double_prime(out)
        elif name == "inc-fin":
            out = increment_fin(out, _int_arg(name, arg))
        elif name == "inc-inf":
            out = increment_inf(out, _int_arg(name, arg))
        elif name == "replace":
            out = replacement(out, _int_arg(name, arg))
        elif name == "concat":
            out = concat(out, parse_vein(arg))
        elif name == "preset-chain":
            kind, _, n = arg.strip().partition(" ")
            out = preset_chain(kind, _int_arg(name, n))
        else:
            raise InputError(f"unknown vein operation {name!r}")
    return out


def _print_tree(tree, depth: int) -> None:
    for p in tree.explore(depth, inf_limit=3):
        w = tree.width(p)
        width = "inf" if w == INF else str(int(w))
        print(f"{format_path(p)}\tr{tree.rank(p)}\t{width}")


def cmd_vein(args) -> int:
    if args.action == "op":
        if args.chain is None:
            raise InputError("vein op needs an operation chain")
        start = None
        if args.vein is not None or args.infile is not None:
            start = _vein_input(args)
        elif not args.chain.strip().startswith("preset-chain"):
            raise InputError("give a vein with --vein TEXT or --in FILE")
        got = apply_ops(start, args.chain)
        if hasattr(got, "explore"):
            _print_tree(got, args.depth)
        else:
            print(format_vein(got))
        return EXIT_OK
    if args.chain is not None:
        # positional text for parse/print/normalize
        args.vein = args.chain
    v = _vein_input(args)
    print(format_vein(normalize(v) if args.action == "normalize" else v))
    return EXIT_OK


# flow -----------------------------------------------------------------------------------

def cmd_flow(args) -> int:
    if args.action == "totalize":
        spec = read_flow(args.infile)
        spec.totalize = True
        text = format_flow_text(spec)
        spec.build().node(())  # fail early on a broken flow
        if args.out:
            with open(args.out, "w", encoding="utf-8") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
        return EXIT_OK
    flow = read_flow(args.flow).build()
    x = _point(args.point)
    if args.action == "eval":
        budget = args.stages if args.stages is not None else default_budget()
        try:
            ev = eval_flow(flow, x, args.bits, budget)
        except BudgetExhausted as exc:
            print(f"budget exhausted: {exc}", file=sys.stderr)
            return EXIT_BUDGET
        except Undefined as exc:
            print(f"undefined: {exc}", file=sys.stderr)
            return EXIT_INPUT
        print(ev.bits)
        return EXIT_OK if not ev.shortfall else EXIT_BUDGET
    # tp-trace
    stages = args.stages if args.stages is not None else default_budget()
    st = initial_state(track_priors=True, keep_history=True)
    st.set_bits(x.take(stages))
    for s in range(1, stages + 1):
        try:
            _advance(flow, st, s)
        except BudgetExhausted as exc:
            print(f"budget exhausted: {exc}", file=sys.stderr)
            return EXIT_BUDGET
        rec = {
            "stage": s,
            "sigma_len": s,
            "tp": format_path(st.current),
            "eligible": [format_path(p) for p in st.eligible],
            "timers": {format_path(p): n for p, n in sorted(st.timers.items())},
            "priors": {format_path(p): n for p, n in sorted(st.prior.items()) if n},
        }
        print(json.dumps(rec, sort_keys=True, separators=(",", ":")))
    return EXIT_OK


# construction -----------------------------------------------------------------------------

def _triples(text: str) -> list:
    out = []
    for part in text.split(";"):
        if not part.strip():
            continue
        try:
            t = tuple(int(v) for v in part.split(","))
        except ValueError:
            raise InputError(f"bad triple {part!r}") from None
        if len(t) != 3 or min(t) < 0:
            raise InputError(f"a triple is three naturals e,i,j, got {part!r}")
        out.append(t)
    return out


def _run(args):
    S = read_tree(args.s_tree)
    U = read_tree(args.u_family)
    reg = read_registry(args.registry) if args.registry else FlowRegistry()
    vein = parse_vein(args.vein) if args.vein else parse_vein("(r0 leaf)")
    stages = args.stages if args.stages is not None else default_budget(5000)
    try:
        return run_construction(S, U, reg, vein, _triples(args.triples), stages, args.depth)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def cmd_construct(args) -> int:
    from .report import summary_tsv, write_report
    trace = _run(args)
    if args.trace:
        with open(args.trace, "w", encoding="utf-8") as fh:
            fh.write(trace.jsonl())
    if trace.stages == 0:
        # the stage-0 comb: each triple's rho followed by a copy of S
        for t in trace.triples:
            print(f"# {format_path(t)} rho={trace.rhos[t]}")
        for w in build_T(trace, 0, args.show_depth):
            print(w if w else "<>")
        return EXIT_OK
    sys.stdout.write(summary_tsv(trace))
    bad = {k: len(v) for k, v in check_all(trace).items() if v}
    if bad:
        print(f"# invariant violations: {bad}", file=sys.stderr)
    if args.report:
        for p in write_report(trace, args.report):
            print(f"# wrote {p}", file=sys.stderr)
    if args.requirement:
        for t in trace.triples:
            for x in _points(args.requirement):
                v = check_requirement_N(trace, t, x, 16, default_budget(2000))
                print(f"# requirement {format_path(t)} {x}: {v}")
    return EXIT_REFUTED if bad else EXIT_OK


def cmd_verify(args) -> int:
    from .verifier import build_verifier, verifier_embeds
    trace = _run(args)
    vf = build_verifier(trace)
    budget = default_budget(2000)
    status = EXIT_OK
    for t in trace.triples:
        for x in _points(args.samples):
            y = final_image(trace, t, x)
            want = x.take(args.bits)
            try:
                got = eval_flow(vf, y, args.bits, budget).bits
            except BudgetExhausted:
                print(f"{format_path(t)}\t{x}\t{y}\tbudget")
                status = max(status, EXIT_BUDGET)
                continue
            except Undefined as exc:
                got = f"undefined ({exc})"
            ok = got == want
            print(f"{format_path(t)}\t{x}\t{y}\t{got}\t{'ok' if ok else 'MISMATCH'}")
            if not ok:
                status = EXIT_REFUTED
    emb = verifier_embeds(trace, vf)
    print(f"# embeds into prime branching: {str(emb).lower()}")
    if not emb:
        status = EXIT_REFUTED
    return status


# reductions ----------------------------------------------------------------------------------

def _multifunction(spec: str):
    if spec == "point":
        return PointFiber()
    return read_tree(spec)


def _evaluator(text: str):
    if text.endswith(".flow"):
        return read_flow(text).build()
    try:
        return P.leaf_function(text)
    except (ValueError, IndexError):
        raise InputError(f"unknown evaluator {text!r}") from None


def cmd_check_reduction(args) -> int:
    F, G = _multifunction(args.F), _multifunction(args.G)
    budget = args.budget if args.budget is not None else default_budget()
    if args.kind == "cowadge":
        pairs = []
        for part in args.samples.split(";"):
            if not part.strip():
                continue
            x, _, y = part.partition(",")
            pairs.append((_point(x), _point(y or x)))
        verdicts = check_cowadge(F, G, _evaluator(args.theta), pairs, args.precision, budget)
        labels = [f"{x}\t{y}" for x, y in pairs]
    else:
        xs = _points(args.samples)
        verdicts = check_weihrauch(F, G, _evaluator(args.h), _evaluator(args.theta), xs,
                                   args.precision, budget)
        labels = [str(x) for x in xs]
    for lab, v in zip(labels, verdicts):
        print(f"{lab}\t{v}")
    counts = summarize(verdicts)
    print("# " + " ".join(f"{k}={n}" for k, n in counts.items()))
    if counts[Verdict.REFUTED.value]:
        return EXIT_REFUTED
    if any(v.verdict is Verdict.INCONCLUSIVE and v.note.startswith("budget") for v in verdicts):
        return EXIT_BUDGET
    return EXIT_OK


# parser ------------------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    # usage errors are input errors; exit status 2 is reserved for refutations
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="veinlab", description="veins, flows and copy constructions")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    v = sub.add_parser("vein", help="parse, print, normalize or transform veins")
    v.add_argument("action", choices=["parse", "print", "normalize", "op"])
    v.add_argument("chain", nargs="?", help="operation chain for op (e.g. 'double-prime;normalize'), "
                                            "or vein text for the other actions")
    v.add_argument("--in", dest="infile")
    v.add_argument("--vein")
    v.add_argument("--depth", type=int, default=3, help="exploration depth for tree-of")
    v.set_defaults(func=cmd_vein)

    f = sub.add_parser("flow", help="evaluate, trace or totalize a flow file")
    f.add_argument("action", choices=["eval", "tp-trace", "totalize"])
    f.add_argument("--flow")
    f.add_argument("--in", dest="infile")
    f.add_argument("--out")
    f.add_argument("--point", default="/0")
    f.add_argument("--bits", type=int, default=16)
    f.add_argument("--stages", type=int)
    f.set_defaults(func=cmd_flow)

    def construction_args(p):
        p.add_argument("--s-tree", required=True)
        p.add_argument("--u-family", required=True)
        p.add_argument("--registry")
        p.add_argument("--vein", help="vein text of the flows (default: a single leaf)")
        p.add_argument("--triples", default="0,0,0")
        p.add_argument("--stages", type=int)
        p.add_argument("--depth", type=int, default=64)

    c = sub.add_parser("construct", help="run the copy construction")
    construction_args(c)
    c.add_argument("--trace", help="write the JSONL event stream here")
    c.add_argument("--report", help="directory for summary.tsv and figures")
    c.add_argument("--requirement", help="points (';'-separated) to diagnose against U")
    c.add_argument("--show-depth", type=int, default=6, help="depth of the printed stage-0 comb")
    c.set_defaults(func=cmd_construct)

    r = sub.add_parser("verify", help="run the construction, build its verifier and check round trips")
    construction_args(r)
    r.add_argument("--samples", default="/0;1/0;01/0")
    r.add_argument("--bits", type=int, default=16)
    r.set_defaults(func=cmd_verify)

    k = sub.add_parser("check-reduction", help="check a reduction witness on samples")
    k.add_argument("--kind", choices=["cowadge", "weihrauch"], default="cowadge")
    k.add_argument("--F", required=True, help="tree file or 'point'")
    k.add_argument("--G", required=True, help="tree file or 'point'")
    k.add_argument("--theta", default="identity", help="leaf function text or a .flow file")
    k.add_argument("--h", default="identity", help="input translation for weihrauch")
    k.add_argument("--samples", required=True, help="'x[,y];...' for cowadge, 'x;...' for weihrauch")
    k.add_argument("--precision", type=int, default=16)
    k.add_argument("--budget", type=int)
    k.set_defaults(func=cmd_check_reduction)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "flow":
        need = "infile" if args.action == "totalize" else "flow"
        if getattr(args, need) is None:
            print(f"veinlab flow {args.action}: --{'in' if need == 'infile' else 'flow'} is required",
                  file=sys.stderr)
            return EXIT_INPUT
    try:
        return args.func(args)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (InputError, VeinError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
