"""Smoke test for the eqindex extension module."""

import json
import math

import eqindex


def close(a, b, tol=1e-9):
    return all(abs(x - y) <= tol for x, y in zip(a, b))


def main():
    names = eqindex.fixture_names()
    assert "ces-3eq" in names and "cobb-douglas-2" in names, names

    p = eqindex.project_to_sphere([3.0, 4.0])
    assert close(p, [0.6, 0.8])
    assert abs(eqindex.spherical_distance([1.0, 0.0], [0.0, 1.0]) - math.pi / 2) < 1e-12

    frame = eqindex.tangent_basis([0.6, 0.8])
    assert eqindex.oriented_sign([0.6, 0.8], frame) == 1
    g = eqindex.bordered_determinant([[-1.0, 0.0], [0.0, -1.0]], [0.6, 0.8])
    assert abs(g - 1.0) < 1e-12, g

    q = eqindex.project_to_sphere([1.0, 2.0, 2.0])
    assert max(abs(v) for v in eqindex.reference_field(q, q)) < 1e-12

    cd = eqindex.Economy.fixture("cobb-douglas-2")
    assert cd.dimension == 2
    s = 1 / math.sqrt(2)
    assert max(abs(v) for v in cd.excess_demand([s, s])) < 1e-12
    assert eqindex.Economy.fixture("cobb-douglas-2").check_hypotheses(200)["passed"]["walras"]

    ces = eqindex.Economy.fixture("ces-3eq")
    eqs = ces.equilibria()
    assert [e["index"] for e in eqs] == [1, -1, 1], eqs
    for e in eqs:
        assert ces.index(e["price"]) == (e["index"], e["index"])

    report = ces.theorem_check(json.dumps({"seed": 11}))
    assert report["verdict"] == "verified", report["verdict"]
    assert report["index_sum"] == 1 and report["sign_sum"] == 0

    custom = eqindex.Economy.from_json(json.dumps({"agents": [
        {"weights": [0.5, 0.5], "rho": 0.0, "endowment": [1.0, 0.0]},
        {"weights": [0.5, 0.5], "rho": 0.0, "endowment": [0.0, 1.0]},
    ]}))
    assert len(custom.equilibria()) == 1

    try:
        eqindex.Economy.fixture("no-such-model")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown fixture accepted")

    print("smoke test ok:", len(names), "fixtures,", len(eqs), "ces equilibria")


if __name__ == "__main__":
    main()
