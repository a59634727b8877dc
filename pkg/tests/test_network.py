import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contrakt.errors import NetworkError
from contrakt.measures import kron, mu
from contrakt.network import (
    block_system, certify_sync, coordination_error, evaluate_block, load_network, load_network_file,
    simulate_network, stacked_system, threshold_k, transversal_decompose,
)
from contrakt.simulate import integrate


def network_doc(nodes, edges, modes=None, gain=1.0, gamma="1 0\n0 1"):
    if modes is None:
        modes = 'a:\n0 "sin(t)"\n-1 0\nb:\n0 "-sin(t)"\n-1 0'
    names = [line[:-1] for line in modes.splitlines() if line.endswith(":")]
    signal = f"dwell = 3\nperiod = \"2*pi\"\nt=0 mode={names[0]}\n"
    if len(names) > 1:
        signal += f"t=pi mode={names[1]}\n"
    graph = "\n".join(" ".join(map(str, e)) for e in edges)
    return (f"[network]\nnodes = {nodes}\n[graph]\n{graph}\n[gamma]\n{gamma}\n"
            f"[coupling]\ngain = {gain}\n[modes]\n{modes}\n[signal]\n{signal}")


@pytest.fixture(scope="module")
def paper_net(fixtures_dir):
    return load_network_file(fixtures_dir / "network.net")


def test_load(paper_net):
    assert paper_net.nodes == 3 and paper_net.dim == 2 and paper_net.gain == 0.4
    np.testing.assert_allclose(paper_net.spectrum()[0], [0, 3, 3], atol=1e-12)
    assert paper_net.algebraic_connectivity == pytest.approx(3.0)
    np.testing.assert_allclose(paper_net.mode_matrix(1, np.pi / 2), [[0, -1], [-1, 0]], atol=1e-15)
    assert paper_net.time_dependent


@pytest.mark.parametrize("doc, fragment", [
    (network_doc(3, [(0, 1), (1, 5)]), "node"),
    (network_doc(2, [(0, 1)], gamma="1 0 0\n0 1 0\n0 0 1"), "gamma"),
    (network_doc(2, [(0, 1)], modes='a:\n0 "x"\n-1 0'), "line"),
    (network_doc(2, [(0, 1)], gain=-1), "gain"),
    (network_doc(2, [(0, 1, -2)]), "nonnegative|weight"),
    ("[network]\nnodes = 2\n", "missing"),
])
def test_load_errors(doc, fragment):
    with pytest.raises(NetworkError, match=fragment):
        load_network(doc)


# ---------------------------------------------------------------- decomposition

def test_blocks_complete_graph(paper_net):
    blocks = transversal_decompose(paper_net)
    assert [lam for lam, _ in blocks] == pytest.approx([0, 3, 3])
    t = 0.7
    a = paper_net.mode_matrix(0, t)
    np.testing.assert_allclose(evaluate_block(blocks[0][1][0], t), a, atol=1e-15)
    for lam, per_mode in blocks[1:]:
        np.testing.assert_allclose(evaluate_block(per_mode[0], t), a - 3 * 0.4 * np.eye(2), atol=1e-14)


def test_blocks_path_and_single_node():
    net = load_network(network_doc(2, [(0, 1)], gain=0.5))
    lams = [lam for lam, _ in transversal_decompose(net)]
    assert lams == pytest.approx([0, 2])
    a = net.mode_matrix(0, 1.0)
    np.testing.assert_allclose(evaluate_block(transversal_decompose(net)[1][1][0], 1.0), a - np.eye(2), atol=1e-14)
    single = load_network(network_doc(1, []))
    blocks = transversal_decompose(single)
    assert len(blocks) == 1 and blocks[0][0] == 0.0
    with pytest.raises(NetworkError, match="two nodes"):
        certify_sync(single)


def test_synchronization_subspace_is_invariant(rng):
    for _ in range(20):
        n_nodes = int(rng.integers(2, 6))
        adj = np.triu(rng.uniform(0, 2, (n_nodes, n_nodes)) * (rng.random((n_nodes, n_nodes)) < 0.6), 1)
        adj = adj + adj.T
        lap = np.diag(adj.sum(1)) - adj
        gamma = rng.normal(size=(3, 3))
        s = rng.normal(size=3)
        v = kron(lap, gamma) @ kron(np.ones((n_nodes, 1)), s[:, None]).ravel()
        assert np.max(np.abs(v)) <= 1e-12 * (1 + np.abs(gamma).max() * np.abs(lap).max())


def test_stacked_projection_matches_blocks(paper_net, rng):
    net = paper_net
    x0 = rng.uniform(-1, 1, (3, 2))
    traj = integrate(stacked_system(net), x0.ravel(), 0.0, 5.0, 1e-3)
    _, q = net.spectrum()
    t_s, x_s, _ = traj.grid_samples()
    stacked = x_s.reshape(len(t_s), 3, 2)
    for i in range(3):
        z0 = q[:, i] @ x0
        block = integrate(block_system(net, i), z0, 0.0, 5.0, 1e-3)
        t_b, z_b, _ = block.grid_samples()
        np.testing.assert_array_equal(t_b, t_s)
        proj = np.einsum("j,mjn->mn", q[:, i], stacked)
        np.testing.assert_allclose(proj, z_b, atol=1e-6)


# ---------------------------------------------------------------- certification

def test_certify_examples(paper_net):
    cert = certify_sync(paper_net, "1")
    assert cert.valid
    assert cert.rate == pytest.approx(3 * 0.4 - 1, abs=1e-12)
    assert cert.binding_lambda2 and cert.envelope is not None
    # the sampled path can only be less conservative than the envelope
    assert cert.sampled.rate >= cert.rate - 1e-12
    weak = certify_sync(paper_net.with_gain(0.2), "1")
    assert not weak.valid and -weak.rate == pytest.approx(0.4, abs=1e-12)
    assert not certify_sync(paper_net.with_gain(0.0), "1").valid
    assert "lambda_2 block binding: yes" in cert.report()
    assert "valid = true" in cert.to_kv()


def test_disconnected_graph_rejected():
    net = load_network(network_doc(4, [(0, 1), (2, 3)]))
    with pytest.raises(NetworkError, match="disconnected"):
        certify_sync(net)


def test_constant_modes_are_exact():
    net = load_network(network_doc(3, [(0, 1), (1, 2)], modes="a:\n-1 0\n0 -1", gain=0.1))
    cert = certify_sync(net, "2")
    assert cert.envelope is None and cert.sampled.exact
    assert cert.rate == pytest.approx(1 + 0.1 * 1.0)  # lambda_2(P3) = 1


# ---------------------------------------------------------------- threshold

def test_threshold_paper(paper_net):
    k = threshold_k(paper_net, "1", (0.0, 2.0), 1e-9)
    assert k == pytest.approx(1 / 3, abs=1e-6)


def test_threshold_already_contracting():
    net = load_network(network_doc(3, [(0, 1), (1, 2)], modes="a:\n-1 0\n0 -1"))
    assert threshold_k(net, "1", (0.0, 5.0)) == 0.0


def test_threshold_halves_when_lambda2_doubles():
    modes = 'a:\n0 "sin(t)"\n-1 0\nb:\n0 "-sin(t)"\n-1 0'
    k3 = load_network(network_doc(3, [(0, 1), (0, 2), (1, 2)], modes=modes))
    k6 = load_network(network_doc(6, list(itertools.combinations(range(6), 2)), modes=modes))
    assert k6.algebraic_connectivity == pytest.approx(2 * k3.algebraic_connectivity)
    a, b = threshold_k(k3, "1", (0, 2), 1e-10), threshold_k(k6, "1", (0, 2), 1e-10)
    assert b == pytest.approx(a / 2, abs=1e-8)
    assert b == pytest.approx(1 / 6, abs=1e-8)


def test_threshold_errors(paper_net):
    with pytest.raises(NetworkError, match="no VALID"):
        threshold_k(paper_net, "1", (0.0, 0.3))
    with pytest.raises(NetworkError):
        threshold_k(paper_net, "1", (1.0, 0.5))


@settings(max_examples=60, deadline=None)
@given(st.integers(3, 6), st.integers(0, 2**32 - 1))
def test_adding_an_edge_never_decreases_lambda2(n, seed):
    r = np.random.default_rng(seed)
    pairs = list(itertools.combinations(range(n), 2))
    present = [p for p in pairs if r.random() < 0.5]
    missing = [p for p in pairs if p not in present]
    if not missing:
        return
    extra = missing[int(r.integers(len(missing)))]
    before = load_network(network_doc(n, present or [(0, 1)])).algebraic_connectivity
    after = load_network(network_doc(n, (present or [(0, 1)]) + [extra])).algebraic_connectivity

    # oracle: restrict L to the complement of 1_N with a Helmert basis and use
    # the general eigen-solver (polynomial roots are too ill-conditioned at repeated eigenvalues)
    def oracle(edges):
        adj = np.zeros((n, n))
        for i, j in edges:
            adj[i, j] = adj[j, i] = 1
        lap = np.diag(adj.sum(1)) - adj
        basis = np.zeros((n, n - 1))
        for k in range(1, n):
            basis[:k, k - 1] = 1.0
            basis[k, k - 1] = -k
            basis[:, k - 1] /= np.linalg.norm(basis[:, k - 1])
        return float(np.min(np.linalg.eigvals(basis.T @ lap @ basis).real))

    assert before == pytest.approx(oracle(present or [(0, 1)]), abs=1e-9)
    assert after >= before - 1e-10


# ---------------------------------------------------------------- simulation

def test_simulation_coupled_and_identical(paper_net, rng):
    x0 = rng.uniform(-1, 1, (3, 2))
    rep, nodes, traj = simulate_network(paper_net, x0, 0.0, 20.0, 1e-3)
    assert rep.slope <= -0.15 and rep.certified
    assert len(nodes) == 3 and nodes[0].states.shape[1] == 2
    same = np.tile(rng.uniform(-1, 1, 2), (3, 1))
    rep, _, _ = simulate_network(paper_net, same, 0.0, 5.0, 1e-3)
    assert np.all(rep.errors == 0)


def test_coordination_error():
    x = np.array([[1.0, 0.0, 1.0, 0.0], [1.0, 1.0, -1.0, -1.0]])
    err = coordination_error(x, 2)
    np.testing.assert_allclose(err, [0.0, 2.0])


def test_stacked_field_matches_kronecker_form(rng):
    net = load_network(network_doc(4, [(0, 1, 2.5), (1, 2), (2, 3, 0.5), (0, 3)], gain=0.7,
                                   gamma="1 0.3\n-0.2 2"))
    sys = stacked_system(net)
    for mode in range(2):
        for t in (0.0, 1.3):
            x = rng.normal(size=8)
            ref = (kron(np.eye(4), net.mode_matrix(mode, t)) - kron(net.laplacian, net.coupling)) @ x
            np.testing.assert_allclose(sys.field(mode, x, t), ref, atol=1e-13)
