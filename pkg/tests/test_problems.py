import numpy as np
import pytest

from imrestore.core.errors import ShapeError
from imrestore.optim.lbfgs import LbfgsConfig, minimize
from imrestore.optim.linops import FactorPair, Kernel, MaskSet, StackedField, conv, make_kernel
from imrestore.optim.penalty import Penalty, PenaltyKind
from imrestore.optim.prox import BoxSet, TVKind, prox_l21_columns, prox_stacked_f
from imrestore.problems.base import SubproblemContext
from imrestore.problems.deblur import DeblurProblem
from imrestore.problems.inpaint import InpaintProblem, default_inpaint_penalty, inpaint_init
from tests.helpers import smooth_image


def _random_field(rng, shape, scale=1.0):
    return StackedField(*(scale * rng.standard_normal(shape) for _ in range(3)))


def _solve_dual(problem, ctx, tol, rounds=40):
    """Drive the dual to a duality gap below ``tol``; returns primal, dual and gap."""
    shape = problem.dual_shape

    def oracle(vector):
        value, gradient = problem.dual(ctx, StackedField.from_vector(vector, shape))
        return value, gradient.to_vector()

    vector = np.zeros(3 * shape[0] * shape[1])
    for _ in range(rounds):
        vector, _ = minimize(oracle, vector, LbfgsConfig(max_iters=300, gtol=1e-13))
        xi = StackedField.from_vector(vector, shape)
        x = problem.primal_from_dual(ctx, xi)
        gap = problem.majorant(ctx, x) - problem.lower_bound(ctx, xi)
        if gap <= tol:
            break
    return x, xi, gap


def _directional_check(fn, point, direction, gradient_dot, h=1e-6):
    numeric = (fn(point + h * direction) - fn(point - h * direction)) / (2 * h)
    assert numeric == pytest.approx(gradient_dot, rel=1e-4, abs=1e-5)


@pytest.fixture
def deblur_case(rng):
    clean = smooth_image(10, 10)
    kernel = make_kernel("average", 3)
    observed = conv(kernel, clean)
    flips = rng.choice(100, size=15, replace=False)
    observed.flat[flips] = rng.integers(0, 2, size=15)
    return clean, observed, kernel


@pytest.fixture
def inpaint_case(rng):
    clean = smooth_image(8, 6)
    mask = MaskSet(rng.uniform(size=(8, 6)) > 0.2)
    observed = mask.project(clean)
    return clean, mask, observed


class TestDeblurProblem:
    def test_objective_matches_definition(self, deblur_case):
        clean, observed, kernel = deblur_case
        penalty = Penalty(kind=PenaltyKind.LOG, eps=0.5)
        problem = DeblurProblem(observed, kernel, penalty, nu=0.3)
        residual = np.abs(conv(kernel, clean) - observed)
        gh = np.zeros_like(clean)
        gv = np.zeros_like(clean)
        gh[:, :-1] = clean[:, 1:] - clean[:, :-1]
        gv[:-1, :] = clean[1:, :] - clean[:-1, :]
        expected = float(np.sum(np.log1p(residual / 0.5))) + 0.3 * float(np.sum(np.sqrt(gh**2 + gv**2)))
        assert problem.objective(clean) == pytest.approx(expected, rel=1e-12)

    def test_objective_is_infinite_outside_box(self, deblur_case):
        clean, observed, kernel = deblur_case
        problem = DeblurProblem(observed, kernel)
        outside = clean.copy()
        outside[0, 0] = 1.5
        assert problem.objective(outside) == float("inf")
        assert np.isfinite(DeblurProblem(observed, kernel, box=BoxSet.unbounded()).objective(outside))
        with pytest.raises(ValueError):
            problem.build_context(outside, 1.0, 1.0)

    def test_rejects_bad_inputs(self, deblur_case):
        clean, observed, kernel = deblur_case
        with pytest.raises(ShapeError):
            DeblurProblem(np.zeros(5), kernel)
        with pytest.raises(ValueError):
            DeblurProblem(observed, kernel, nu=-1.0)
        problem = DeblurProblem(observed, kernel)
        ctx = problem.build_context(clean, 1.0, 1.0)
        with pytest.raises(ShapeError):
            problem.dual(ctx, StackedField.zeros((3, 3)))

    def test_majorant_touches_objective_at_anchor(self, deblur_case):
        clean, observed, kernel = deblur_case
        problem = DeblurProblem(observed, kernel, nu=0.2)
        ctx = problem.build_context(clean, 3.0, 0.7)
        assert problem.majorant(ctx, clean) == pytest.approx(problem.objective(clean), rel=1e-10)
        assert ctx.objective_value == pytest.approx(problem.objective(clean))

    def test_majorant_dominates_objective(self, deblur_case, rng):
        clean, observed, kernel = deblur_case
        problem = DeblurProblem(observed, kernel, Penalty(kind=PenaltyKind.RATIONAL, eps=0.3), nu=0.2)
        ctx = problem.build_context(clean, 1.0, 1.0)
        for _ in range(10):
            x = rng.uniform(0.0, 1.0, size=clean.shape)
            assert problem.majorant(ctx, x) >= problem.objective(x) - 1e-10

    def test_weak_duality(self, deblur_case, rng):
        clean, observed, kernel = deblur_case
        problem = DeblurProblem(observed, kernel, nu=0.3)
        ctx = problem.build_context(clean, 2.0, 0.5)
        for _ in range(10):
            x = rng.uniform(0.0, 1.0, size=clean.shape)
            xi = _random_field(rng, clean.shape, scale=rng.uniform(0.01, 3.0))
            assert problem.majorant(ctx, x) >= problem.lower_bound(ctx, xi) - 1e-9

    def test_dual_at_zero(self, deblur_case):
        clean, observed, kernel = deblur_case
        problem = DeblurProblem(observed, kernel, nu=0.3)
        ctx = problem.build_context(clean, 2.0, 0.5)
        value, gradient = problem.dual(ctx, StackedField.zeros(clean.shape))
        prox = prox_stacked_f(ctx.shift, ctx.weights, ctx.tv, 1.0 / ctx.alpha)
        assert value == pytest.approx(-prox.envelope_value - ctx.constant)
        expected = prox.point - ctx.shift
        assert np.allclose(gradient.to_vector(), expected.to_vector(), atol=1e-12)

    @pytest.mark.parametrize("tv", list(TVKind))
    @pytest.mark.parametrize("use_fft", [False, True])
    def test_dual_gradient_matches_finite_differences(self, deblur_case, rng, tv, use_fft):
        clean, observed, kernel = deblur_case
        problem = DeblurProblem(observed, kernel, Penalty(kind=PenaltyKind.LOG, eps=1.0), nu=0.4, tv=tv, use_fft=use_fft)
        ctx = problem.build_context(clean, 1.5, 0.8)
        xi = _random_field(rng, clean.shape, scale=0.5)
        direction = _random_field(rng, clean.shape)
        _, gradient = problem.dual(ctx, xi)
        _directional_check(lambda z: problem.dual(ctx, z)[0], xi, direction, gradient.dot(direction))

    def test_strong_duality_against_closed_form(self, deblur_case):
        clean, observed, _ = deblur_case
        gamma, alpha = 1.0, 0.5
        problem = DeblurProblem(observed, Kernel.identity(), Penalty(kind=PenaltyKind.EXP, eps=4.0), nu=0.0)
        ctx = problem.build_context(clean, gamma, alpha)
        x, xi, gap = _solve_dual(problem, ctx, tol=1e-7)
        assert gap <= 1e-7

        # separable surrogate: w |x - b| + (gamma + alpha) / 2 (x - anchor)^2 over the box
        shift = clean - observed
        shrunk = np.sign(shift) * np.maximum(np.abs(shift) - ctx.weights / (gamma + alpha), 0.0)
        exact = np.clip(observed + shrunk, 0.0, 1.0)
        assert problem.majorant(ctx, exact) <= problem.majorant(ctx, x) + 1e-10
        assert problem.majorant(ctx, exact) >= problem.lower_bound(ctx, xi) - 1e-9
        assert np.allclose(x, exact, atol=1e-3)

    def test_strong_duality_with_blur_and_tv(self, deblur_case, rng):
        clean, observed, kernel = deblur_case
        problem = DeblurProblem(observed, kernel, Penalty(kind=PenaltyKind.LOG, eps=0.5), nu=0.2)
        ctx = problem.build_context(clean, 4.0, 1.0)
        x, xi, gap = _solve_dual(problem, ctx, tol=1e-6)
        assert gap <= 1e-6
        assert BoxSet.unit().contains(x)
        best = problem.majorant(ctx, x)
        for _ in range(20):
            candidate = np.clip(x + 0.01 * rng.standard_normal(x.shape), 0.0, 1.0)
            assert problem.majorant(ctx, candidate) >= best - 1e-6

    def test_scale_and_distance(self, deblur_case):
        clean, observed, kernel = deblur_case
        problem = DeblurProblem(observed, kernel)
        assert problem.scale == pytest.approx(np.linalg.norm(observed))
        assert problem.distance(clean, clean + 0.1) == pytest.approx(1.0)
        assert problem.dual_shape == (10, 10)


class TestInpaintProblem:
    def test_defaults_and_validation(self, inpaint_case):
        clean, mask, observed = inpaint_case
        problem = InpaintProblem(observed, mask)
        assert problem.rank == 6
        assert problem.penalty == default_inpaint_penalty()
        assert problem.tv is TVKind.ANISOTROPIC
        with pytest.raises(ValueError):
            InpaintProblem(observed, mask, rank=7)
        with pytest.raises(ShapeError):
            InpaintProblem(observed[:, :5], mask)
        with pytest.raises(ValueError):
            InpaintProblem(observed, mask, lam=-0.1)

    def test_observation_is_projected(self, inpaint_case, rng):
        clean, mask, _ = inpaint_case
        problem = InpaintProblem(rng.uniform(size=clean.shape), mask)
        assert not problem.observed[~mask.observed].any()

    def test_objective_matches_definition(self, inpaint_case, rng):
        _, mask, observed = inpaint_case
        pair = FactorPair(rng.standard_normal((8, 2)), rng.standard_normal((6, 2)))
        problem = InpaintProblem(observed, mask, Penalty(kind=PenaltyKind.ABS), nu=0.5, lam=0.25, rank=2)
        image = pair.image()
        fidelity = float(np.sum(np.abs(mask.project(image) - observed)))
        tv = float(np.sum(np.abs(np.diff(image, axis=1))) + np.sum(np.abs(np.diff(image, axis=0))))
        reg = float(np.sum(np.linalg.norm(pair.U, axis=0)) + np.sum(np.linalg.norm(pair.V, axis=0)))
        assert problem.objective(pair) == pytest.approx(fidelity + 0.5 * tv + 0.25 * reg, rel=1e-12)
        with pytest.raises(ShapeError):
            problem.objective(FactorPair(np.zeros((8, 3)), np.zeros((6, 3))))

    def test_majorant_touches_objective_at_anchor(self, inpaint_case, rng):
        _, mask, observed = inpaint_case
        problem = InpaintProblem(observed, mask, rank=3)
        anchor = FactorPair(rng.standard_normal((8, 3)), rng.standard_normal((6, 3)))
        ctx = problem.build_context(anchor, 5.0, 1.0)
        assert problem.majorant(ctx, anchor) == pytest.approx(problem.objective(anchor), rel=1e-10)

    def test_majorant_dominates_near_anchor_for_large_gamma(self, inpaint_case, rng):
        _, mask, observed = inpaint_case
        problem = InpaintProblem(observed, mask, Penalty(kind=PenaltyKind.LOG, eps=1.0), nu=0.3, lam=0.1, rank=2)
        anchor = inpaint_init(observed, mask, 2)
        ctx = problem.build_context(anchor, 1e3, 1.0)
        for _ in range(10):
            step = FactorPair(rng.standard_normal((8, 2)), rng.standard_normal((6, 2)))
            step = step * (0.1 / np.sqrt(step.norm_sq()))
            assert problem.majorant(ctx, anchor + step) >= problem.objective(anchor + step)

    def test_weak_duality(self, inpaint_case, rng):
        _, mask, observed = inpaint_case
        problem = InpaintProblem(observed, mask, nu=0.4, lam=0.3, rank=2)
        anchor = FactorPair(rng.standard_normal((8, 2)), rng.standard_normal((6, 2)))
        ctx = problem.build_context(anchor, 10.0, 2.0)
        for _ in range(10):
            x = FactorPair(rng.standard_normal((8, 2)), rng.standard_normal((6, 2)))
            xi = _random_field(rng, (8, 6), scale=rng.uniform(0.01, 2.0))
            assert problem.majorant(ctx, x) >= problem.lower_bound(ctx, xi) - 1e-9

    @pytest.mark.parametrize("lam", [0.0, 0.3])
    def test_dual_gradient_matches_finite_differences(self, inpaint_case, rng, lam):
        _, mask, observed = inpaint_case
        problem = InpaintProblem(observed, mask, Penalty(kind=PenaltyKind.LOG, eps=1.0), nu=0.4, lam=lam, rank=2)
        anchor = FactorPair(rng.standard_normal((8, 2)), rng.standard_normal((6, 2)))
        ctx = problem.build_context(anchor, 3.0, 1.0)
        xi = _random_field(rng, (8, 6), scale=0.5)
        direction = _random_field(rng, (8, 6))
        _, gradient = problem.dual(ctx, xi)
        _directional_check(lambda z: problem.dual(ctx, z)[0], xi, direction, gradient.dot(direction))

    def test_zero_lambda_keeps_shifted_anchor(self, inpaint_case, rng):
        _, mask, observed = inpaint_case
        problem = InpaintProblem(observed, mask, nu=0.4, lam=0.0, rank=2)
        anchor = FactorPair(rng.standard_normal((8, 2)), rng.standard_normal((6, 2)))
        ctx = problem.build_context(anchor, 4.0, 1.0)
        xi = _random_field(rng, (8, 6))
        pulled = ctx.operator.adjoint(xi)
        x = problem.primal_from_dual(ctx, xi)
        assert np.allclose(x.U, anchor.U - pulled.U / 4.0)
        assert np.allclose(x.V, anchor.V - pulled.V / 4.0)

    def test_strong_duality(self, inpaint_case, rng):
        _, mask, observed = inpaint_case
        problem = InpaintProblem(observed, mask, Penalty(kind=PenaltyKind.LOG, eps=0.5), nu=0.3, lam=0.2, rank=2)
        anchor = inpaint_init(observed, mask, 2) + FactorPair(
            0.05 * rng.standard_normal((8, 2)), 0.05 * rng.standard_normal((6, 2))
        )
        ctx = problem.build_context(anchor, 10.0, 1.0)
        x, _, gap = _solve_dual(problem, ctx, tol=1e-6)
        assert gap <= 1e-6
        best = problem.majorant(ctx, x)
        for _ in range(20):
            candidate = x + FactorPair(0.01 * rng.standard_normal((8, 2)), 0.01 * rng.standard_normal((6, 2)))
            assert problem.majorant(ctx, candidate) >= best - 1e-6


class TestInpaintInit:
    def test_rank_one_observation_is_recovered(self, rng):
        u, v = rng.uniform(0.2, 1.0, size=9), rng.uniform(0.2, 1.0, size=7)
        observed = np.outer(u, v)
        pair = inpaint_init(observed, MaskSet.full(observed.shape), 1)
        assert np.allclose(pair.image(), observed, atol=1e-10)

    def test_full_rank_reproduces_masked_observation(self, rng):
        mask = MaskSet(rng.uniform(size=(6, 5)) > 0.3)
        observed = rng.uniform(size=(6, 5))
        pair = inpaint_init(observed, mask, 5)
        assert np.allclose(pair.image(), mask.project(observed), atol=1e-10)

    def test_singular_values_split_evenly(self, rng):
        observed = rng.uniform(size=(7, 5))
        mask = MaskSet.full(observed.shape)
        pair = inpaint_init(observed, mask, 3)
        sigma = np.linalg.svd(observed, compute_uv=False)[:3]
        assert np.allclose(pair.U.T @ pair.U, np.diag(sigma), atol=1e-10)
        assert np.allclose(pair.V.T @ pair.V, np.diag(sigma), atol=1e-10)

    @pytest.mark.parametrize("rank", [0, 6])
    def test_rank_out_of_range(self, rank):
        with pytest.raises(ValueError):
            inpaint_init(np.ones((5, 5)), MaskSet.full((5, 5)), rank)


def test_context_rejects_nonpositive_parameters(deblur_case):
    clean, observed, kernel = deblur_case
    ctx = DeblurProblem(observed, kernel).build_context(clean, 1.0, 1.0)
    assert ctx.with_gamma(8.0).gamma == 8.0
    assert ctx.gamma == 1.0
    with pytest.raises(ValueError):
        ctx.with_gamma(0.0)
    with pytest.raises(ValueError):
        SubproblemContext(**{**ctx.__dict__, "alpha": -1.0})


def _norm_sq(v):
    return float(np.sum(v**2)) if isinstance(v, np.ndarray) else v.norm_sq()


def _primal_dual_minimum(ctx, prox_g, start, iters=20000):
    """Chambolle-Pock on ``min_s g(s) + F(K s)`` in the step ``s = x - anchor``.

    ``F(z) = f(shift + z) + alpha/2 ||z||^2`` and ``K`` is the context operator;
    ``prox_g(v, t)`` is the prox of the step-space remainder of the majorant.
    """
    K = ctx.operator
    v = start
    for _ in range(200):
        w = K.adjoint(K.apply(v))
        v = w * (1.0 / np.sqrt(_norm_sq(w)))
    step = float(0.95 / np.sqrt(np.sqrt(_norm_sq(K.adjoint(K.apply(v))))))

    def prox_f(z, t):
        damped = z * (1.0 / (1.0 + t * ctx.alpha))
        return prox_stacked_f(damped + ctx.shift, ctx.weights, ctx.tv, t / (1.0 + t * ctx.alpha)).point - ctx.shift

    def prox_f_conjugate(y, sigma):
        return y - sigma * prox_f(y * (1.0 / sigma), 1.0 / sigma)

    s = start * 0.0
    s_bar = s
    y = StackedField.zeros(ctx.shift.shape)
    for _ in range(iters):
        y = prox_f_conjugate(y + step * K.apply(s_bar), step)
        s_next = prox_g(s - step * K.adjoint(y), step)
        moved = _norm_sq(s_next - s)
        s_bar = s_next + (s_next - s)
        s = s_next
        if moved < 1e-26:
            break
    return s


class TestPrimalDualAgreement:
    @pytest.mark.parametrize("tv", list(TVKind))
    def test_deblur_minimum_matches_dual_bound(self, rng, tv):
        clean = smooth_image(6, 6)
        kernel = make_kernel("average", 3)
        observed = conv(kernel, clean)
        flips = rng.choice(36, size=6, replace=False)
        observed.flat[flips] = rng.integers(0, 2, size=6)
        problem = DeblurProblem(observed, kernel, Penalty(kind=PenaltyKind.LOG, eps=0.5), nu=0.2, tv=tv)
        ctx = problem.build_context(clean, 4.0, 1.0)
        _, xi, gap = _solve_dual(problem, ctx, tol=1e-6)
        assert gap <= 1e-6
        bound = problem.lower_bound(ctx, xi)

        def prox_g(v, t):
            return np.clip(ctx.anchor + v / (1.0 + t * ctx.gamma), 0.0, 1.0) - ctx.anchor

        s = _primal_dual_minimum(ctx, prox_g, rng.standard_normal(clean.shape))
        value = problem.majorant(ctx, np.clip(ctx.anchor + s, 0.0, 1.0))
        assert value >= bound - 1e-9
        assert abs(value - bound) <= 1e-5

    def test_inpaint_minimum_matches_dual_bound(self, rng):
        clean = smooth_image(6, 5)
        mask = MaskSet(rng.uniform(size=(6, 5)) > 0.2)
        observed = mask.project(clean)
        problem = InpaintProblem(observed, mask, Penalty(kind=PenaltyKind.LOG, eps=0.5), nu=0.3, lam=0.2, rank=2)
        anchor = inpaint_init(observed, mask, 2) + FactorPair(
            0.05 * rng.standard_normal((6, 2)), 0.05 * rng.standard_normal((5, 2))
        )
        ctx = problem.build_context(anchor, 10.0, 1.0)
        _, xi, gap = _solve_dual(problem, ctx, tol=1e-6)
        assert gap <= 1e-6
        bound = problem.lower_bound(ctx, xi)

        def prox_g(v, t):
            center = ctx.anchor + v * (1.0 / (1.0 + t * ctx.gamma))
            threshold = t * problem.lam / (1.0 + t * ctx.gamma)
            shrunk = FactorPair(prox_l21_columns(center.U, threshold).point, prox_l21_columns(center.V, threshold).point)
            return shrunk - ctx.anchor

        start = FactorPair(rng.standard_normal((6, 2)), rng.standard_normal((5, 2)))
        s = _primal_dual_minimum(ctx, prox_g, start)
        value = problem.majorant(ctx, ctx.anchor + s)
        assert value >= bound - 1e-9
        assert abs(value - bound) <= 1e-5
