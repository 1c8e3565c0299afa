"""Command-line driver.

Each verb reads JSON files, runs one analysis and prints a JSON report on stdout
with a one-line summary on stderr. Exit status: 0 when the property holds or a
report was produced, 2 when it fails, 1 on an input error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import tolerances
from .classical import (
    ccm_from_json,
    classical_rule_check,
    cond_indep_report,
    do_conditional as ccm_do_conditional,
    joint_distribution,
)
from .circuits import (
    NODES_ONLY,
    WITH_LOCAL,
    causal_structure,
    circuit_from_json,
    circuit_to_json,
    contract,
    dilate_markov,
    global_unitary,
    no_influence_unitary,
)
from .discovery import discover
from .errors import QCausalError
from .graphs import (
    Incoming,
    Outgoing,
    Rule3Cut,
    d_separated,
    dag_from_json,
    dag_to_json,
    mutilate,
    sr_partition,
)
from .independence_rules import (
    IndependenceQuery,
    d_sep_soundness,
    independence_report,
    qos_check,
    settings_independence,
    theorem_verify,
)
from .quantum import (
    ProcessOperator,
    Qcm,
    check_markov,
    do_conditional,
    measure_prepare_instrument,
    outcome_probs,
    process_from_json,
    process_to_json,
    qcm_from_ccm,
    random_qcm,
    sigma_from_qcm,
    validate,
)
from .splitnode import is_valid, operational_check, process_from_json as cpm_from_json, rel_independence
from .tensor_core import operator_from_json, operator_to_json

SEED = 0x5EED
EXIT_HOLDS, EXIT_INPUT, EXIT_FAILS = 0, 1, 2


class Report(dict):
    """Report payload; ``holds`` (if present) decides the exit status."""


# input helpers ------------------------------------------------------------------------

def _load(path: str) -> Any:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise QCausalError(f"{path}: cannot read file ({exc.strerror})") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise QCausalError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON ({exc.msg})") from exc


def _parse(path: str, parser: Callable[[Any], Any], key: str | None = None) -> Any:
    doc = _load(path)
    if key is not None and isinstance(doc, dict) and key in doc and isinstance(doc[key], dict):
        doc = doc[key]
    try:
        return parser(doc)
    except QCausalError as exc:
        raise QCausalError(f"{path}: {exc}") from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise QCausalError(f"{path}: malformed document ({type(exc).__name__}: {exc})") from exc


def _nodes(text: str | None) -> list[str]:
    if not text:
        return []
    return [s.strip() for s in text.split(",") if s.strip()]


def _dag(path: str):
    return _parse(path, dag_from_json)


def _sigma(path: str, check: bool = True) -> ProcessOperator:
    sigma = _parse(path, process_from_json)
    if check:
        rep = validate(sigma)
        if not rep.ok:
            raise QCausalError(f"{path}: invalid process operator: {'; '.join(rep.failures)}")
    return sigma


def _model_from(sigma: ProcessOperator, dag_path: str) -> Qcm:
    g, _ = _dag(dag_path)
    rep = check_markov(sigma, g)
    if not rep.verdict:
        raise QCausalError(f"process is not Markov for {dag_path}: {'; '.join(rep.failures)}")
    return Qcm(g, {n.name: n.dim for n in sigma.nodes}, rep.channels)


def _jsonable(x: Any) -> Any:
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (set, frozenset)):
        return sorted(_jsonable(v) for v in x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


# verbs ---------------------------------------------------------------------------------

def cmd_dsep(a) -> Report:
    g, _ = _dag(a.dag)
    holds = d_separated(g, _nodes(a.y), _nodes(a.z), _nodes(a.w))
    return Report(holds=holds, summary=f"d-separated: {holds}")


def cmd_mutilate(a) -> Report:
    g, dims = _dag(a.dag)
    if a.mode == "incoming":
        mode = Incoming(_nodes(a.x))
    elif a.mode == "outgoing":
        mode = Outgoing(_nodes(a.z))
    else:
        mode = Rule3Cut(_nodes(a.x), _nodes(a.z), _nodes(a.w))
    cut = mutilate(g, mode)
    return Report(graph=dag_to_json(cut, dims), summary=f"{len(g.edges) - len(cut.edges)} edges removed")


def cmd_sr_partition(a) -> Report:
    g, _ = _dag(a.dag)
    part = sr_partition(g, _nodes(a.y), _nodes(a.z), _nodes(a.w))
    if part is None:
        return Report(holds=False, partition=None, summary="no SR partition exists")
    doc = {k: sorted(getattr(part, k)) for k in ("R_Y", "R_Z", "R_c", "W_Y", "W_Z")}
    return Report(holds=True, partition=doc, summary="SR partition found")


def cmd_joint(a) -> Report:
    p = joint_distribution(_parse(a.ccm, ccm_from_json))
    return Report(variables=list(p.variables), probs=p.probs, summary=f"joint over {len(p.variables)} variables")


def cmd_do(a) -> Report:
    fam = ccm_do_conditional(_parse(a.ccm, ccm_from_json), _nodes(a.s))
    return Report(
        targets=list(fam.targets), settings=list(fam.settings), table=fam.table,
        summary=f"P({','.join(fam.targets)} | do({','.join(fam.settings)}))",
    )


def cmd_ci(a) -> Report:
    p = joint_distribution(_parse(a.ccm, ccm_from_json))
    rep = cond_indep_report(p, _nodes(a.y), _nodes(a.z), _nodes(a.w))
    return Report(
        holds=rep.independent, max_deviation=rep.max_deviation, cmi_bits=rep.cmi_bits,
        summary=f"conditionally independent: {rep.independent} (CMI {rep.cmi_bits:.3g} bits)",
    )


def cmd_rule(a) -> Report:
    m = _parse(a.ccm, ccm_from_json)
    rep = classical_rule_check(m, a.rule, _nodes(a.x), _nodes(a.y), _nodes(a.z), _nodes(a.w))
    return Report(
        holds=rep.consequent, antecedent=rep.antecedent, max_violation=rep.max_violation,
        summary=f"rule {a.rule}: antecedent {rep.antecedent}, consequent {rep.consequent}",
    )


def cmd_cpm_check(a) -> Report:
    k = _parse(a.cpm, cpm_from_json)
    ok, err = is_valid(k)
    out = Report(valid=ok, normalization_error=err)
    holds = ok
    sets = (_nodes(a.y), _nodes(a.z), _nodes(a.w), _nodes(a.x))
    if a.mode:
        out["independent"] = rel_independence(k, a.mode, *sets)
        holds = holds and out["independent"]
    if a.statement:
        out["operational"] = operational_check(k, a.statement, *sets, seed=a.seed)
        holds = holds and out["operational"]
    out["holds"] = holds
    out["summary"] = f"valid: {ok}" + "".join(f", {key}: {out[key]}" for key in ("independent", "operational") if key in out)
    return out


def cmd_qcm_build(a) -> Report:
    if bool(a.dag) == bool(a.ccm):
        raise QCausalError("qcm-build needs exactly one of --dag or --ccm")
    if a.ccm:
        m = qcm_from_ccm(_parse(a.ccm, ccm_from_json))
    else:
        g, dims = _dag(a.dag)
        m = random_qcm(np.random.default_rng(a.seed), g, {v: dims.get(v, a.dim) for v in g.nodes})
    sigma = sigma_from_qcm(m)
    out = Report(process_to_json(sigma))
    out["summary"] = f"process operator over {len(sigma.nodes)} nodes"
    return out


def cmd_validate(a) -> Report:
    rep = validate(_sigma(a.sigma, check=False))
    return Report(
        holds=rep.ok, min_eigenvalue=rep.min_eigenvalue, trace_condition_error=rep.trace_condition_error,
        normalization_error=rep.normalization_error, failures=list(rep.failures),
        summary="valid" if rep.ok else "invalid: " + "; ".join(rep.failures),
    )


def cmd_probs(a) -> Report:
    sigma = _sigma(a.sigma)
    inst = {n: measure_prepare_instrument(n, sigma.dim(n)) for n in _nodes(a.measure)}
    p = outcome_probs(sigma, inst)
    return Report(variables=list(p.variables), probs=p.probs, summary=f"outcome table of shape {p.probs.shape}")


def cmd_markov(a) -> Report:
    sigma = _sigma(a.sigma)
    g, _ = _dag(a.dag)
    rep = check_markov(sigma, g)
    out = Report(
        holds=rep.verdict, reconstruction_error=rep.reconstruction_error,
        max_commutator=rep.max_commutator, failures=list(rep.failures),
        summary=f"Markov: {rep.verdict} (error {rep.reconstruction_error:.3g})",
    )
    if rep.channels is not None:
        out["channels"] = {v: operator_to_json(c) for v, c in rep.channels.items()}
    return out


def cmd_do_op(a) -> Report:
    op = do_conditional(_sigma(a.sigma), _nodes(a.s))
    return Report(operator=operator_to_json(op), summary=f"do-conditional on {len(op.sig)} wires")


def _query(a, mode: str) -> IndependenceQuery:
    return IndependenceQuery(mode, _nodes(a.y), _nodes(a.z), _nodes(a.w), _nodes(a.x))


def cmd_independence(a) -> Report:
    sigma = _sigma(a.sigma)
    rep = independence_report(sigma, _query(a, a.mode), gate=not a.no_gate, seed=a.seed)
    return Report(
        holds=rep.independent, qcmi_bits=rep.qcmi_bits, star_residual=rep.star_residual, mode=rep.mode,
        summary=f"{rep.mode} independence: {rep.independent} (QCMI {rep.qcmi_bits:.3g} bits)",
    )


def cmd_settings(a) -> Report:
    sigma = _sigma(a.sigma)
    q = _query(a, "settings")
    if a.witness:
        rep = settings_independence(sigma, q, witness=_parse(a.witness, operator_from_json))
    elif a.dag:
        rep = settings_independence(sigma, q, model=_model_from(sigma, a.dag))
    else:
        rep = settings_independence(sigma, q)
    return Report(
        holds=rep.independent, max_residual=rep.max_residual, route=rep.route, settings=rep.n_settings,
        summary=f"settings independence: {rep.independent} ({rep.route} route, residual {rep.max_residual:.3g})",
    )


def cmd_rule_q(a) -> Report:
    sigma = _sigma(a.sigma)
    m = _model_from(sigma, a.dag)
    sets = (_nodes(a.x), _nodes(a.y), _nodes(a.z), _nodes(a.w))
    if a.rule == 0:
        rep = d_sep_soundness(m, sets[1], sets[2], sets[3], n_samples=a.samples, seed=a.seed)
        return Report(
            holds=rep.holds, d_separated=rep.d_separated, max_qcmi=rep.max_qcmi, samples=rep.samples,
            summary=f"d-separated: {rep.d_separated}, {'independence holds' if rep.d_separated else 'violation found'}: {rep.holds}",
        )
    rep = theorem_verify(m, a.rule, *sets, n_samples=a.samples, seed=a.seed)
    return Report(
        holds=rep.holds, antecedent=rep.antecedent, vacuous=rep.vacuous, max_metric=rep.max_metric,
        samples=rep.n_samples,
        summary=f"rule {a.rule}: antecedent {rep.antecedent}, holds {rep.holds} (max {rep.max_metric:.3g})",
    )


def cmd_qos(a) -> Report:
    sigma = _sigma(a.sigma)
    rep = qos_check(sigma, a.variant, _nodes(a.y), _nodes(a.z), _nodes(a.w), _nodes(a.x), basis=a.basis)
    return Report(
        holds=rep.holds, variant=rep.variant, max_deviation=rep.max_deviation, basis=rep.basis,
        summary=f"QOS{rep.variant} with {rep.basis} basis: {rep.holds}",
    )


def cmd_contract(a) -> Report:
    c = _parse(a.circuit, circuit_from_json, key="circuit")
    op = contract(c, a.include)
    if a.include == NODES_ONLY:
        out = Report(process_to_json(ProcessOperator.from_operator(op)))
    else:
        out = Report(operator_to_json(op))
    out["summary"] = f"contracted to {len(op.sig)} wires"
    return out


def cmd_no_influence(a) -> Report:
    c = _parse(a.circuit, circuit_from_json, key="circuit")
    u = global_unitary(c)
    holds = no_influence_unitary(u.unitary, u.in_wires, u.out_wires, _nodes(a.a), _nodes(a.d))
    return Report(holds=holds, summary=f"no influence from {a.a} to {a.d}: {holds}")


def cmd_causal_structure(a) -> Report:
    c = _parse(a.circuit, circuit_from_json, key="circuit")
    g = causal_structure(global_unitary(c))
    return Report(graph=dag_to_json(g), summary=f"{len(g.edges)} direct-cause arrows")


def cmd_dilate(a) -> Report:
    sigma = _sigma(a.sigma)
    g, _ = _dag(a.dag)
    d = dilate_markov(sigma, g, seed=a.seed)
    return Report(
        holds=True, circuit=circuit_to_json(d.circuit), owners=dict(d.owners),
        reconstruction_error=d.reconstruction_error,
        summary=f"dilation with {len(d.circuit.gates)} gates (error {d.reconstruction_error:.3g})",
    )


def cmd_discover(a) -> Report:
    rep = discover(_sigma(a.sigma))
    out = Report(rep.to_json(include_channels=True))
    out["holds"] = bool(rep.is_dag and rep.markov)
    out["summary"] = f"induced graph with {len(rep.induced.edges)} arrows; acyclic {rep.is_dag}; Markov {rep.markov}"
    return out


# parser ----------------------------------------------------------------------------------

def _sets(p: argparse.ArgumentParser, *names: str) -> None:
    for n in names:
        p.add_argument(f"--{n}", default="", help=f"comma-separated {n.upper()} nodes")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=lambda s: int(s, 0), default=SEED, help="random seed (default 0x5EED)")
    common.add_argument("--tol", action="append", default=[], metavar="NAME=VALUE", help="override a tolerance")
    fmt = common.add_mutually_exclusive_group()
    fmt.add_argument("--json", dest="pretty", action="store_false", help="compact JSON (default)")
    fmt.add_argument("--pretty", dest="pretty", action="store_true", help="indented JSON")
    common.add_argument("--threads", type=int, default=1, help="accepted for sweeps; reports do not depend on it")
    common.set_defaults(pretty=False)

    top = argparse.ArgumentParser(prog="qcausal", description="Classical and quantum causal model checks.")
    sub = top.add_subparsers(dest="verb", required=True, metavar="VERB")

    def verb(name: str, fn, help_: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(fn=fn)
        return p

    p = verb("dsep", cmd_dsep, "d-separation of Y and Z given W")
    p.add_argument("--dag", required=True)
    _sets(p, "y", "z", "w")
    p = verb("mutilate", cmd_mutilate, "remove edges into X, out of Z, or the rule-3 cut")
    p.add_argument("--dag", required=True)
    p.add_argument("--mode", choices=("incoming", "outgoing", "rule3"), required=True)
    _sets(p, "x", "z", "w")
    p = verb("sr-partition", cmd_sr_partition, "find an SR partition")
    p.add_argument("--dag", required=True)
    _sets(p, "y", "z", "w")
    p = verb("joint", cmd_joint, "joint distribution of a classical model")
    p.add_argument("--ccm", required=True)
    p = verb("do", cmd_do, "truncated factorization P(T | do(S))")
    p.add_argument("--ccm", required=True)
    _sets(p, "s")
    p = verb("ci", cmd_ci, "conditional independence in a classical model's joint")
    p.add_argument("--ccm", required=True)
    _sets(p, "y", "z", "w")
    p = verb("rule", cmd_rule, "classical do-calculus rule check")
    p.add_argument("--ccm", required=True)
    p.add_argument("--rule", type=int, choices=(1, 2, 3), required=True)
    _sets(p, "x", "y", "z", "w")
    p = verb("cpm-check", cmd_cpm_check, "classical process validity and relative independence")
    p.add_argument("--cpm", required=True)
    p.add_argument("--mode", choices=("plain", "do", "broken", "settings"))
    p.add_argument("--statement", choices=("COS1", "COS2", "COS3"))
    _sets(p, "x", "y", "z", "w")
    p = verb("qcm-build", cmd_qcm_build, "process operator of a random or classical-embedded model")
    p.add_argument("--dag")
    p.add_argument("--ccm")
    p.add_argument("--dim", type=int, default=2, help="dimension for nodes without one")
    p = verb("validate", cmd_validate, "process operator validity")
    p.add_argument("--sigma", required=True)
    p = verb("probs", cmd_probs, "outcome probabilities")
    p.add_argument("--sigma", required=True)
    p.add_argument("--measure", default="", help="nodes measured in the computational basis")
    p = verb("markov", cmd_markov, "Markov check against a DAG")
    p.add_argument("--sigma", required=True)
    p.add_argument("--dag", required=True)
    p = verb("do-op", cmd_do_op, "trace the inputs of S")
    p.add_argument("--sigma", required=True)
    _sets(p, "s")
    p = verb("independence", cmd_independence, "quantum relative independence")
    p.add_argument("--sigma", required=True)
    p.add_argument("--mode", choices=("plain", "do", "broken"), default="plain")
    p.add_argument("--no-gate", action="store_true", help="skip the star-product cross-check")
    _sets(p, "x", "y", "z", "w")
    p = verb("settings", cmd_settings, "independence from settings")
    p.add_argument("--sigma", required=True)
    p.add_argument("--witness", help="operator file holding eta")
    p.add_argument("--dag", help="DAG for which sigma is Markov")
    _sets(p, "x", "y", "z", "w")
    p = verb("rule-q", cmd_rule_q, "quantum rule theorem sweep (rule 0: d-separation soundness)")
    p.add_argument("--sigma", required=True)
    p.add_argument("--dag", required=True)
    p.add_argument("--rule", type=int, choices=(0, 1, 2, 3), required=True)
    p.add_argument("--samples", type=int, default=20)
    _sets(p, "x", "y", "z", "w")
    p = verb("qos", cmd_qos, "operational statement with an environment locus")
    p.add_argument("--sigma", required=True)
    p.add_argument("--variant", type=int, choices=(1, 2, 3), required=True)
    p.add_argument("--basis", default="computational", choices=("computational", "fourier", "hadamard"))
    _sets(p, "x", "y", "z", "w")
    p = verb("contract", cmd_contract, "process operator of a broken circuit")
    p.add_argument("--circuit", required=True)
    p.add_argument("--include", choices=(NODES_ONLY, WITH_LOCAL), default=NODES_ONLY)
    p = verb("no-influence", cmd_no_influence, "influence test through the circuit unitary")
    p.add_argument("--circuit", required=True)
    p.add_argument("--a", required=True, help="comma-separated source names")
    p.add_argument("--d", required=True, help="comma-separated target names")
    p = verb("causal-structure", cmd_causal_structure, "direct-cause graph of a circuit unitary")
    p.add_argument("--circuit", required=True)
    p = verb("dilate", cmd_dilate, "unitary circuit realizing a Markov process")
    p.add_argument("--sigma", required=True)
    p.add_argument("--dag", required=True)
    p = verb("discover", cmd_discover, "induced graph, acyclicity and Markov check")
    p.add_argument("--sigma", required=True)
    return top


def _tolerance_overrides(items: Sequence[str]) -> dict[str, float]:
    out = {}
    known = set(tolerances.Tolerances.__dataclass_fields__)
    for item in items:
        name, sep, value = item.partition("=")
        if not sep or name not in known:
            raise QCausalError(f"--tol expects NAME=VALUE with NAME in {sorted(known)}, got {item!r}")
        try:
            out[name] = float(value)
        except ValueError as exc:
            raise QCausalError(f"--tol {name}: {value!r} is not a number") from exc
    return out


def run(argv: Sequence[str] | None = None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_HOLDS
    try:
        with tolerances.override(**_tolerance_overrides(args.tol)):
            report = args.fn(args)
    except QCausalError as exc:
        print(f"qcausal {args.verb}: error: {exc}", file=stderr)
        return EXIT_INPUT
    summary = report.pop("summary", "")
    doc = {"verb": args.verb, **report}
    indent = 2 if args.pretty else None
    print(json.dumps(_jsonable(doc), sort_keys=True, indent=indent), file=stdout)
    if summary:
        print(f"qcausal {args.verb}: {summary}", file=stderr)
    holds = report.get("holds")
    return EXIT_FAILS if holds is False else EXIT_HOLDS


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
