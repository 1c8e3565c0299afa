import io
import json

import numpy as np
import pytest

from qcausal.catalog import SEPARATION_EXAMPLE, chain, collider
from qcausal.circuits import circuit_to_json, fine_tuned_cnot_circuit
from qcausal.classical import ccm_to_json, random_ccm
from qcausal.cli import EXIT_FAILS, EXIT_HOLDS, EXIT_INPUT, run
from qcausal.graphs import dag_to_json
from qcausal.independence_rules import coherent_copy_process
from qcausal.quantum import process_to_json, random_qcm, sigma_from_qcm
from qcausal.splitnode import induct_ccm_to_csm, process_to_json as cpm_to_json
from qcausal.tensor_core import operator_to_json


def cli(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = run([str(a) for a in argv], out, err)
    doc = json.loads(out.getvalue()) if out.getvalue() else None
    return code, doc, err.getvalue()


@pytest.fixture
def files(tmp_path):
    def write(name, doc):
        path = tmp_path / name
        path.write_text(json.dumps(doc))
        return path

    rng = np.random.default_rng(7)
    m = random_qcm(rng, chain(3), 2)
    ccm = random_ccm(rng, chain(3), 2)
    return {
        "sep": write("sep.json", dag_to_json(SEPARATION_EXAMPLE)),
        "chain": write("chain.json", dag_to_json(chain(3))),
        "collider": write("collider.json", dag_to_json(collider(2))),
        "ccm": write("ccm.json", ccm_to_json(ccm)),
        "cpm": write("cpm.json", cpm_to_json(induct_ccm_to_csm(ccm))),
        "sigma": write("sigma.json", process_to_json(sigma_from_qcm(m))),
        "copy": write("copy.json", process_to_json(coherent_copy_process())),
        "cnot": write("cnot.json", circuit_to_json(fine_tuned_cnot_circuit())),
        "write": write,
    }


def test_dsep_exit_codes(files):
    code, doc, err = cli("dsep", "--dag", files["sep"], "--y", "N2", "--z", "N4", "--w", "N3,N5")
    assert code == EXIT_HOLDS and doc == {"verb": "dsep", "holds": True}
    assert "d-separated: True" in err
    code, doc, _ = cli("dsep", "--dag", files["sep"], "--y", "N2", "--z", "N4", "--w", "N1,N3,N5")
    assert code == EXIT_FAILS and doc["holds"] is False


def test_graph_verbs(files):
    code, doc, _ = cli("mutilate", "--dag", files["sep"], "--mode", "incoming", "--x", "N2")
    assert code == EXIT_HOLDS and ["N3", "N2"] not in doc["graph"]["edges"]
    code, doc, _ = cli("sr-partition", "--dag", files["chain"], "--y", "A1", "--z", "A3", "--w", "A2")
    assert code == EXIT_HOLDS and doc["partition"] is not None


def test_classical_verbs(files):
    code, doc, _ = cli("joint", "--ccm", files["ccm"])
    assert code == EXIT_HOLDS and abs(np.sum(doc["probs"]) - 1) < 1e-12
    code, doc, _ = cli("do", "--ccm", files["ccm"], "--s", "A2")
    assert code == EXIT_HOLDS and doc["settings"] == ["A2"]
    code, doc, _ = cli("ci", "--ccm", files["ccm"], "--y", "A1", "--z", "A3", "--w", "A2")
    assert code == EXIT_HOLDS and doc["cmi_bits"] < 1e-9
    code, doc, _ = cli("rule", "--ccm", files["ccm"], "--rule", "1", "--y", "A3", "--z", "A1", "--w", "A2")
    assert code == EXIT_HOLDS and doc["antecedent"] is True


def test_cpm_check(files):
    code, doc, _ = cli("cpm-check", "--cpm", files["cpm"], "--mode", "plain", "--statement", "COS1",
                       "--y", "A1", "--z", "A3", "--w", "A2")
    assert code == EXIT_HOLDS and doc["valid"] and doc["independent"] and doc["operational"]


def test_quantum_process_verbs(files):
    sigma, chain_dag = files["sigma"], files["chain"]
    assert cli("validate", "--sigma", sigma)[0] == EXIT_HOLDS
    code, doc, _ = cli("probs", "--sigma", sigma, "--measure", "A1,A3")
    assert code == EXIT_HOLDS and abs(np.sum(doc["probs"]) - 1) < 1e-9
    code, doc, _ = cli("markov", "--sigma", sigma, "--dag", chain_dag)
    assert code == EXIT_HOLDS and set(doc["channels"]) == {"A1", "A2", "A3"}
    assert cli("markov", "--sigma", sigma, "--dag", files["collider"])[0] == EXIT_FAILS
    code, doc, _ = cli("do-op", "--sigma", sigma, "--s", "A2")
    assert code == EXIT_HOLDS and "operator" in doc
    code, doc, _ = cli("discover", "--sigma", sigma)
    assert code == EXIT_HOLDS and sorted(map(tuple, doc["edges"])) == [("A1", "A2"), ("A2", "A3")]


def test_quantum_independence_verbs(files):
    sigma, chain_dag = files["sigma"], files["chain"]
    code, doc, _ = cli("independence", "--sigma", sigma, "--y", "A1", "--z", "A3", "--w", "A2")
    assert code == EXIT_HOLDS and doc["qcmi_bits"] < 1e-7
    code, doc, _ = cli("independence", "--sigma", files["copy"], "--y", "Y", "--z", "Z", "--w", "W")
    assert code == EXIT_FAILS and abs(doc["qcmi_bits"] - 1.0) < 1e-9
    code, doc, _ = cli("qos", "--sigma", files["copy"], "--variant", "1", "--y", "Y", "--z", "Z", "--w", "W")
    assert code == EXIT_HOLDS
    code, doc, _ = cli("settings", "--sigma", sigma, "--dag", chain_dag, "--y", "A1", "--z", "A3")
    assert code == EXIT_HOLDS and doc["route"] == "model"
    code, doc, _ = cli("rule-q", "--sigma", sigma, "--dag", chain_dag, "--rule", "1", "--y", "A3", "--z", "A1",
                       "--w", "A2", "--samples", "2")
    assert code == EXIT_HOLDS and doc["antecedent"] is True
    code, doc, _ = cli("rule-q", "--sigma", sigma, "--dag", chain_dag, "--rule", "0", "--y", "A1", "--z", "A3",
                       "--w", "A2", "--samples", "2")
    assert code == EXIT_HOLDS and doc["d_separated"] is True


def test_settings_without_route_is_an_input_error(files):
    code, doc, err = cli("settings", "--sigma", files["sigma"], "--y", "A1", "--z", "A3")
    assert code == EXIT_INPUT and doc is None and "witness" in err


def test_circuit_verbs(files):
    code, doc, _ = cli("contract", "--circuit", files["cnot"])
    assert code == EXIT_HOLDS
    path = files["write"]("cnot_sigma.json", {k: v for k, v in doc.items() if k != "verb"})
    code, doc, _ = cli("discover", "--sigma", path)
    assert doc["edges"] == []
    code, doc, _ = cli("no-influence", "--circuit", files["cnot"], "--a", "A", "--d", "B")
    assert code == EXIT_FAILS
    code, doc, _ = cli("causal-structure", "--circuit", files["cnot"])
    assert ["A", "B"] in doc["graph"]["edges"]


def test_qcm_build_and_dilate(files):
    code, doc, _ = cli("qcm-build", "--dag", files["chain"], "--seed", "0x11")
    assert code == EXIT_HOLDS
    sigma = files["write"]("built.json", {k: v for k, v in doc.items() if k != "verb"})
    code, doc, _ = cli("dilate", "--sigma", sigma, "--dag", files["chain"])
    assert code == EXIT_HOLDS and doc["reconstruction_error"] < 1e-7
    assert cli("qcm-build", "--dag", files["chain"], "--ccm", files["ccm"])[0] == EXIT_INPUT


def test_input_errors(files, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    code, _, err = cli("dsep", "--dag", bad, "--y", "a", "--z", "b")
    assert code == EXIT_INPUT and "invalid JSON" in err
    code, _, err = cli("dsep", "--dag", tmp_path / "missing.json", "--y", "a", "--z", "b")
    assert code == EXIT_INPUT and "cannot read" in err
    code, _, err = cli("dsep", "--dag", files["sep"], "--y", "Q", "--z", "N4")
    assert code == EXIT_INPUT and "unknown node" in err
    assert cli("dsep", "--dag", files["sep"], "--y", "N2", "--z", "N4", "--tol", "bogus=1")[0] == EXIT_INPUT
    assert cli("no-such-verb")[0] == EXIT_INPUT


def test_tolerance_override_changes_verdict(files):
    args = ("independence", "--sigma", files["copy"], "--y", "Y", "--z", "Z", "--w", "W", "--no-gate")
    assert cli(*args)[0] == EXIT_FAILS
    assert cli(*args, "--tol", "cmi_quantum=2")[0] == EXIT_HOLDS


def test_pretty_output(files):
    out, err = io.StringIO(), io.StringIO()
    run(["dsep", "--dag", str(files["sep"]), "--y", "N2", "--z", "N4", "--pretty"], out, err)
    assert out.getvalue().startswith("{\n")
