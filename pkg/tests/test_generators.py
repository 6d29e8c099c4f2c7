import numpy as np
import pytest
from scipy.linalg import expm

from nonmarkov.analytic import expm_superop
from nonmarkov.generators import (
    GkslSpec,
    KernelFamily,
    KernelSpec,
    LidarShabaniParams,
    dephasing_channel,
    gksl,
    kernel_at,
    lidar_shabani,
    ls_kernel,
)
from nonmarkov.operator_core import (
    SuperOperator,
    Verdict,
    apply,
    certify,
    pauli,
    random_kraus,
    random_unital_channel,
)

I2, SX, SY, SZ = pauli()


def random_gksl(d, rng):
    h = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return GkslSpec(0.5 * (h + h.conj().T), random_kraus(d, 2, rng))


def test_gksl_zero():
    L = gksl(GkslSpec(np.zeros((2, 2))))
    np.testing.assert_array_equal(L.matrix, np.zeros((4, 4)))


def test_gksl_dephasing_action(rng):
    L = gksl(GkslSpec(np.zeros((2, 2)), [SZ]))
    a = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    np.testing.assert_allclose(apply(L, a), SZ @ a @ SZ - a, atol=1e-14)
    np.testing.assert_array_equal(apply(L, I2), np.zeros((2, 2)))


def test_gksl_unitary_heisenberg_rotation():
    h = SZ / 2
    L = gksl(GkslSpec(h))
    t = np.pi
    u = expm(1j * h * t)
    closed = u @ SX @ u.conj().T
    np.testing.assert_allclose(apply(expm_superop(L, t), SX), closed, atol=1e-13)
    np.testing.assert_allclose(closed, -SX, atol=1e-13)


def test_gksl_annihilates_identity_random(rng):
    for d in (2, 3, 4):
        L = gksl(random_gksl(d, rng))
        assert np.linalg.norm(apply(L, np.eye(d))) <= 1e-12 * L.norm()


def test_gksl_rejects_non_hermitian():
    with pytest.raises(ValueError):
        GkslSpec(np.array([[0, 1], [0, 0]]))


def test_gksl_rejects_dim_mismatch():
    with pytest.raises(ValueError):
        GkslSpec(np.zeros((2, 2)), [np.eye(3)])


@pytest.mark.parametrize("d", [2, 3, 4])
@pytest.mark.parametrize("t", [0.1, 1.0, 5.0])
def test_gksl_generates_cp_unital_semigroup(d, t):
    rng = np.random.default_rng(100 * d + int(10 * t))
    L = gksl(random_gksl(d, rng))
    c = certify(expm_superop(L, t))
    assert c.verdict is Verdict.CP
    assert c.unitality_residual <= 1e-9


def test_ls_kernel_values():
    assert ls_kernel(1.0, 1.0, 0.0) == 1.0
    assert ls_kernel(1.0, 1.0, 1.0) == pytest.approx(np.exp(-2.0), rel=1e-15)
    assert ls_kernel(1.0, 1.0, 1.0) == pytest.approx(0.135335, abs=1e-6)
    np.testing.assert_array_equal(ls_kernel(1.7, 0.0, np.array([0.0, 3.0, 100.0])), 1.7**2)
    assert np.all(ls_kernel(2.0, 0.3, np.linspace(0, 50, 200)) >= 0)


def test_lidar_shabani_kernel_structure():
    B = dephasing_channel()
    ks = lidar_shabani(LidarShabaniParams(1.3, 0.7, B))
    eye = np.eye(4)
    for t in (0.0, 0.4, 2.5):
        b, z, l = kernel_at(ks, t)
        k = ls_kernel(1.3, 0.7, t)
        np.testing.assert_allclose(z.matrix, -k * eye, atol=1e-15)
        np.testing.assert_allclose(l.matrix, k * (B.matrix - eye), atol=1e-12)
        np.testing.assert_allclose(b.matrix, k * B.matrix, atol=1e-15)
    _, _, l0 = kernel_at(lidar_shabani(LidarShabaniParams(1.0, 1.0, B)), 0.0)
    np.testing.assert_allclose(l0.matrix, B.matrix - eye, atol=1e-15)


def test_lidar_shabani_rejects_bad_channel():
    with pytest.raises(ValueError, match="not CP"):
        LidarShabaniParams(1.0, 1.0, SuperOperator.transpose_map(2))
    with pytest.raises(ValueError, match="not unital"):
        LidarShabaniParams(1.0, 1.0, 2.0 * SuperOperator.identity(2))
    with pytest.raises(ValueError):
        LidarShabaniParams(0.0, 1.0, dephasing_channel())
    with pytest.raises(ValueError):
        LidarShabaniParams(1.0, -0.1, dephasing_channel())


def test_kernel_families_annihilate_identity(rng):
    d = 3

    def kraus_fn(t):
        return [np.cos(t) * np.diag([1.0, 2.0, 0.5]), np.sin(t) * (SX_3 + 1j * t * np.eye(3))]

    SX_3 = np.roll(np.eye(3), 1, axis=0)
    h = rng.normal(size=(3, 3))
    spec = KernelSpec(KernelFamily.from_kraus(kraus_fn, d),
                      h_t=lambda t: np.sin(t) * (h + h.T))
    for t in np.linspace(0, 4, 9):
        b, _, l = kernel_at(spec, t)
        assert np.linalg.norm(apply(l, np.eye(d))) <= 1e-12 * max(1.0, l.norm())
        assert certify(b).verdict is Verdict.CP
    fam = spec.memory()
    for t in (0.3, 1.1):
        np.testing.assert_allclose(fam.matrix_at(t), kernel_at(spec, t)[2].matrix, atol=1e-14)


def test_kernel_spec_rejects_non_cp_family():
    bad = KernelFamily(2, lambda t: SuperOperator.transpose_map(2).matrix)
    with pytest.raises(ValueError, match="not CP"):
        KernelSpec(bad)


def test_kernel_at_negative_time():
    with pytest.raises(ValueError):
        kernel_at(KernelSpec.zero(2), -1.0)


def test_exponential_memory_matches_pointwise(rng):
    B = random_unital_channel(2, 3, rng)
    ks = lidar_shabani(LidarShabaniParams(0.8, 1.2, B))
    mem = ks.memory()
    assert mem.exp_form is not None
    ts = np.linspace(0, 3, 7)
    np.testing.assert_allclose(
        mem.on_grid(ts), np.stack([kernel_at(ks, t)[2].matrix for t in ts]), atol=1e-13
    )


def test_semigroup_family_is_cp():
    L = gksl(GkslSpec(SX / 3, [SZ, 0.5 * SY]))
    fam = KernelFamily.semigroup(L, 2.0)
    for t in (0.0, 0.5, 3.0):
        assert certify(fam.at(t)).verdict is Verdict.CP
        np.testing.assert_allclose(fam.matrix_at(t), 2.0 * expm(t * L.matrix), atol=1e-13)
