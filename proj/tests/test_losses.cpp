#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "sagan/gradcheck.hpp"
#include "sagan/losses.hpp"
#include "test_util.hpp"

using namespace sagan;
using namespace sagan::ad;
using namespace sagan::losses;
using geometry::TransformKind;

namespace {

Var scores(Tape& g, std::vector<double> v) {
    auto n = static_cast<int64_t>(v.size());
    return g.input(Tensor({n, 1}, std::move(v)), false);
}

double scalar_of(Var v) { return v->value[0]; }

}  // namespace

TEST_CASE("critic_adv_loss closed forms") {
    Tape g;
    CHECK(scalar_of(critic_adv_loss(g, scores(g, {0}), scores(g, {0}), scores(g, {0}),
                                    scores(g, {0}))) == 0.0);
    CHECK(scalar_of(critic_adv_loss(g, scores(g, {1}), scores(g, {1}), scores(g, {0.5}),
                                    scores(g, {0.5}))) == 0.0);
    CHECK(scalar_of(critic_adv_loss(g, scores(g, {2}), scores(g, {1}), scores(g, {0}),
                                    scores(g, {0}))) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_THROWS_AS(critic_adv_loss(g, g.input(Tensor({0, 1}), false), scores(g, {0}),
                                    scores(g, {0}), scores(g, {0})),
                    ValueError);
}

TEST_CASE("gen_adv_loss closed forms and arithmetic oracle") {
    Tape g;
    CHECK(scalar_of(gen_adv_loss(g, scores(g, {0, 0}), scores(g, {0}))) == 0.0);
    CHECK(scalar_of(gen_adv_loss(g, scores(g, {1}), scores(g, {1}))) ==
          doctest::Approx(-2.0).epsilon(1e-12));

    Rng rng(3);
    std::vector<double> fake, fwd;
    double m1 = 0, m2 = 0;
    for (int i = 0; i < 7; ++i) {
        fake.push_back(rng.uniform(-2, 2));
        fwd.push_back(rng.uniform(-2, 2));
        m1 += fake.back();
        m2 += fwd.back();
    }
    double expect = -(m1 / 7.0) - (m2 / 7.0);
    CHECK(std::abs(scalar_of(gen_adv_loss(g, scores(g, fake), scores(g, fwd))) - expect) < 1e-12);
}

TEST_CASE("pcl values and symmetry") {
    Rng rng(5);
    Tensor x = testutil::random_tensor(rng, {2, 3, 4, 4});
    Tape g;
    Var vx = g.input(x, false);
    CHECK(scalar_of(pcl(g, vx, vx)) == 0.0);

    Tensor shifted = x;
    for (auto& v : shifted.data) v += 0.5;
    Var vs = g.input(shifted, false);
    CHECK(scalar_of(pcl(g, vs, vx)) == doctest::Approx(0.5).epsilon(1e-12));
    // symmetric under exchange
    CHECK(scalar_of(pcl(g, vs, vx)) == scalar_of(pcl(g, vx, vs)));

    Tensor y = testutil::random_tensor(rng, {2, 3, 4, 4});
    double expect = 0.0;
    for (int64_t i = 0; i < x.numel(); ++i) expect += std::abs(x[i] - y[i]);
    expect /= static_cast<double>(x.numel());
    Var vy = g.input(y, false);
    CHECK(std::abs(scalar_of(pcl(g, vx, vy)) - expect) < 1e-12);

    CHECK_THROWS_AS(pcl(g, vx, g.input(Tensor({1, 3, 4, 4}), false)), ShapeError);
}

TEST_CASE("scl values, oracle, and deliberate asymmetry") {
    Tape g;
    Rng rng(7);

    // t_yx == invert(t_xy) -> exactly 0
    auto t = testutil::random_homography(rng);
    auto tinv = geometry::invert(t);
    Tensor pxy({1, 8}), pyx({1, 8});
    for (int i = 0; i < 8; ++i) {
        pxy.at(0, i) = t.params[static_cast<size_t>(i)];
        pyx.at(0, i) = tinv.params[static_cast<size_t>(i)];
    }
    CHECK(scalar_of(scl(g, g.input(pxy, false), g.input(pyx, false),
                        TransformKind::Homography)) == 0.0);

    // identity vs affine translate(0.5, 0): single differing entry over 6
    Tensor ida({1, 6}), tra({1, 6});
    auto idp = geometry::identity_params(TransformKind::Affine);
    auto trp = geometry::translation(TransformKind::Affine, 0.5, 0.0).params;
    for (int i = 0; i < 6; ++i) {
        ida.at(0, i) = idp[static_cast<size_t>(i)];
        tra.at(0, i) = trp[static_cast<size_t>(i)];
    }
    CHECK(scalar_of(scl(g, g.input(ida, false), g.input(tra, false), TransformKind::Affine)) ==
          doctest::Approx(0.5 / 6.0).epsilon(1e-12));

    // independent inverse-plus-subtract oracle; also demonstrates asymmetry
    auto t1 = testutil::random_homography(rng);
    auto t2 = testutil::random_homography(rng);
    Tensor p1({1, 8}), p2({1, 8});
    for (int i = 0; i < 8; ++i) {
        p1.at(0, i) = t1.params[static_cast<size_t>(i)];
        p2.at(0, i) = t2.params[static_cast<size_t>(i)];
    }
    auto inv1 = geometry::invert(t1);
    double expect = 0.0;
    for (int i = 0; i < 8; ++i)
        expect += std::abs(inv1.params[static_cast<size_t>(i)] - t2.params[static_cast<size_t>(i)]);
    expect /= 8.0;
    double forward = scalar_of(scl(g, g.input(p1, false), g.input(p2, false),
                                   TransformKind::Homography));
    CHECK(std::abs(forward - expect) < 1e-9);
    double swapped = scalar_of(scl(g, g.input(p2, false), g.input(p1, false),
                                   TransformKind::Homography));
    CHECK(forward != swapped);   // not symmetric; the oracle is the contract

    CHECK_THROWS_AS(scl(g, g.input(p1, false), g.input(ida, false), TransformKind::Homography),
                    ShapeError);
    CHECK_THROWS_AS(scl(g, g.input(p1, false), g.input(p2, false), TransformKind::Tps),
                    UnsupportedKindError);
}

TEST_CASE("cycle_loss arithmetic and linearity") {
    Tape g;
    auto s = [&](double v) { return g.input(Tensor::scalar(v), false); };
    CHECK(scalar_of(cycle_loss(g, s(0), s(0), 10.0)) == 0.0);
    CHECK(scalar_of(cycle_loss(g, s(1), s(1), 10.0)) == doctest::Approx(11.0).epsilon(1e-12));

    Rng rng(9);
    double a = rng.uniform(0, 2), b = rng.uniform(0, 2), lam = rng.uniform(0, 20);
    CHECK(std::abs(scalar_of(cycle_loss(g, s(a), s(b), lam)) - (a + lam * b)) < 1e-12);
    // linear in both arguments
    CHECK(std::abs(scalar_of(cycle_loss(g, s(2 * a), s(b), lam)) -
                   (scalar_of(cycle_loss(g, s(a), s(b), lam)) + a)) < 1e-12);
}

TEST_CASE("mask_identity_loss closed forms") {
    Rng rng(11);
    Tensor img = testutil::random_tensor(rng, {1, 3, 4, 4});
    Tape g;
    Var vi = g.input(img, false);
    Var ones = g.input(Tensor::full({1, 1, 4, 4}, 1.0), false);
    CHECK(scalar_of(mask_identity_loss(g, vi, vi, ones)) == 0.0);

    Tensor other = testutil::random_tensor(rng, {1, 3, 4, 4});
    Var vo = g.input(other, false);
    Var zeros = g.input(Tensor::zeros({1, 1, 4, 4}), false);
    CHECK(scalar_of(mask_identity_loss(g, vi, vo, zeros)) == 0.0);

    // half mask with unit difference -> 0.5
    Tensor a = Tensor::zeros({1, 2, 2, 2});
    Tensor b = Tensor::full({1, 2, 2, 2}, 1.0);
    Tensor half = Tensor::zeros({1, 1, 2, 2});
    half[0] = 1.0;
    half[1] = 1.0;
    CHECK(scalar_of(mask_identity_loss(g, g.input(a, false), g.input(b, false),
                                       g.input(half, false))) ==
          doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("siamese_loss closed forms and branch properties") {
    Tape g;
    Tensor e = Tensor({1, 4}, {0.1, -0.2, 0.3, 0.4});
    Var ve = g.input(e, false);
    CHECK(scalar_of(siamese_loss(g, 1, ve, ve, 2.0)) == 0.0);

    // negative pair with d >= m -> 0
    Tensor far = Tensor({1, 4}, {5, 5, 5, 5});
    CHECK(scalar_of(siamese_loss(g, 0, ve, g.input(far, false), 2.0)) == 0.0);

    // negative pair, d = 0, m = 2 -> 4
    CHECK(scalar_of(siamese_loss(g, 0, ve, ve, 2.0)) == doctest::Approx(4.0).epsilon(1e-12));

    // positive pair at distance 0.3 -> 0.09
    Tensor e2 = e;
    e2[0] += 0.3;
    CHECK(std::abs(scalar_of(siamese_loss(g, 1, ve, g.input(e2, false), 2.0)) - 0.09) < 1e-9);

    // positive branch is independent of the margin
    CHECK(scalar_of(siamese_loss(g, 1, ve, g.input(e2, false), 0.5)) ==
          scalar_of(siamese_loss(g, 1, ve, g.input(e2, false), 7.0)));

    // negative branch non-increasing in d
    double prev = 1e9;
    for (double d = 0.0; d <= 2.5; d += 0.25) {
        Tensor shifted = e;
        shifted[0] += d;
        double v = scalar_of(siamese_loss(g, 0, ve, g.input(shifted, false), 2.0));
        CHECK(v <= prev + 1e-12);
        prev = v;
    }

    CHECK_THROWS_AS(siamese_loss(g, 1, ve, g.input(Tensor({1, 3}), false), 2.0), ShapeError);
}

TEST_CASE("total_gen_loss weighted sum") {
    Tape g;
    auto s = [&](double v) { return g.input(Tensor::scalar(v), false); };
    LossWeights w;
    w.lambda_cyc = 1;
    w.lambda_idt = 1;
    w.lambda_siam = 1;
    CHECK(scalar_of(total_gen_loss(g, s(0), s(0), s(0), s(0), w)) == 0.0);
    CHECK(scalar_of(total_gen_loss(g, s(1), s(1), s(1), s(1), w)) ==
          doctest::Approx(4.0).epsilon(1e-12));

    Rng rng(13);
    LossWeights w2;
    w2.lambda_cyc = rng.uniform(0, 3);
    w2.lambda_idt = rng.uniform(0, 3);
    w2.lambda_siam = rng.uniform(0, 3);
    double ga = rng.uniform(-1, 1), cy = rng.uniform(0, 1), id = rng.uniform(0, 1),
           si = rng.uniform(0, 1);
    double expect = ga + w2.lambda_cyc * cy + w2.lambda_idt * id + w2.lambda_siam * si;
    CHECK(std::abs(scalar_of(total_gen_loss(g, s(ga), s(cy), s(id), s(si), w2)) - expect) < 1e-12);
}

TEST_CASE("loss gradients match finite differences") {
    Rng rng(15);
    Tensor x = testutil::random_tensor(rng, {2, 2, 4, 4});
    Tensor y = testutil::random_tensor(rng, {2, 2, 4, 4});
    Tensor mask = testutil::random_tensor(rng, {2, 1, 4, 4}, 0.0, 1.0);

    auto pass = [](const gradcheck::CheckResult& r) {
        INFO(r.name, " max rel err ", r.max_rel_err);
        CHECK(r.pass);
    };

    pass(gradcheck::check_gradients("pcl", {x, y}, [](Tape& g, const std::vector<Var>& in) {
        return pcl(g, in[0], in[1]);
    }));
    pass(gradcheck::check_gradients("mask_identity", {x, y, mask},
                                    [](Tape& g, const std::vector<Var>& in) {
        return mask_identity_loss(g, in[0], in[1], in[2]);
    }));

    Tensor p1({2, 8}), p2({2, 8});
    for (int64_t b = 0; b < 2; ++b) {
        auto t1 = testutil::random_homography(rng);
        auto t2 = testutil::random_homography(rng);
        for (int i = 0; i < 8; ++i) {
            p1.at(b, i) = t1.params[static_cast<size_t>(i)];
            p2.at(b, i) = t2.params[static_cast<size_t>(i)];
        }
    }
    pass(gradcheck::check_gradients("scl", {p1, p2}, [](Tape& g, const std::vector<Var>& in) {
        return scl(g, in[0], in[1], TransformKind::Homography);
    }));

    Tensor e1 = testutil::random_tensor(rng, {3, 6});
    Tensor e2 = testutil::random_tensor(rng, {3, 6});
    pass(gradcheck::check_gradients("siamese pos", {e1, e2},
                                    [](Tape& g, const std::vector<Var>& in) {
        return siamese_loss(g, 1, in[0], in[1], 2.0);
    }));
    pass(gradcheck::check_gradients("siamese neg", {e1, e2},
                                    [](Tape& g, const std::vector<Var>& in) {
        return siamese_loss(g, 0, in[0], in[1], 2.0);
    }));

    Tensor sc1 = testutil::random_tensor(rng, {4, 1});
    Tensor sc2 = testutil::random_tensor(rng, {4, 1});
    Tensor sc3 = testutil::random_tensor(rng, {4, 1});
    Tensor sc4 = testutil::random_tensor(rng, {4, 1});
    pass(gradcheck::check_gradients("critic_adv", {sc1, sc2, sc3, sc4},
                                    [](Tape& g, const std::vector<Var>& in) {
        return critic_adv_loss(g, in[0], in[1], in[2], in[3]);
    }));
    pass(gradcheck::check_gradients("gen_adv", {sc1, sc3},
                                    [](Tape& g, const std::vector<Var>& in) {
        return gen_adv_loss(g, in[0], in[1]);
    }));
}

TEST_CASE("gradient penalty: closed forms") {
    Rng rng(21);
    // linear critic with unit-norm weight: |grad| = 1 everywhere -> 0
    Tensor w({4, 1}, {0.5, 0.5, 0.5, 0.5});  // L2 norm = 1
    CriticFn linear = [&w](Tape& g, Var x) {
        return g.matmul(g.reshape(x, {x->value.dim(0), 4}), g.constant(w));
    };
    Tensor real = testutil::random_tensor(rng, {3, 4});
    Tensor fake = testutil::random_tensor(rng, {3, 4});
    Rng gp_rng(1);
    CHECK(gradient_penalty_value(linear, real, fake, gp_rng) ==
          doctest::Approx(0.0).epsilon(1e-12));

    // zero critic: |grad| = 0 -> (0-1)^2 = 1
    CriticFn zero = [](Tape& g, Var x) {
        return g.scale(g.row_sum(g.reshape(x, {x->value.dim(0), 4})), 0.0);
    };
    Rng gp_rng2(2);
    CHECK(gradient_penalty_value(zero, real, fake, gp_rng2) == doctest::Approx(1.0));
}

TEST_CASE("gradient penalty: input gradient matches finite differences") {
    Rng rng(23);
    Tensor cw = testutil::random_tensor(rng, {2, 1, 3, 3}, -0.5, 0.5);
    Tensor cb = testutil::random_tensor(rng, {2});
    Tensor fw = testutil::random_tensor(rng, {2 * 16, 1});
    CriticFn critic = [&](Tape& g, Var x) {
        Var h = g.leaky_relu(g.conv2d(x, g.constant(cw), g.constant(cb), 2, 1), 0.2);
        return g.matmul(g.flatten_images(h), g.constant(fw));
    };
    Tensor x = testutil::random_tensor(rng, {2, 1, 8, 8});
    Tensor analytic = critic_input_gradient(critic, x);

    double max_rel = 0.0;
    const double h = 1e-4;
    for (int64_t i = 0; i < x.numel(); i += 7) {
        double saved = x[i];
        auto eval = [&]() {
            Tape g;
            Var score = critic(g, g.input(x, false));
            double s = 0.0;
            for (double v : score->value.data) s += v;
            return s;
        };
        x[i] = saved + h;
        double fp = eval();
        x[i] = saved - h;
        double fm = eval();
        x[i] = saved;
        double fd = (fp - fm) / (2 * h);
        double denom = std::max({std::abs(fd), std::abs(analytic[i]), 1e-4});
        max_rel = std::max(max_rel, std::abs(fd - analytic[i]) / denom);
    }
    CHECK(max_rel < 1e-3);
}

TEST_CASE("gradient penalty: parameter gradient matches finite differences of the value") {
    Rng rng(29);
    Tensor cw = testutil::random_tensor(rng, {2, 1, 3, 3}, -0.5, 0.5);
    Tensor cb = testutil::random_tensor(rng, {2});
    Tensor fw = testutil::random_tensor(rng, {2 * 16, 1});
    Tensor real = testutil::random_tensor(rng, {2, 1, 8, 8});
    Tensor fake = testutil::random_tensor(rng, {2, 1, 8, 8});

    auto critic_with = [&](Tensor& w, Tensor& b, Tensor& f) {
        return CriticFn([&w, &b, &f](Tape& g, Var x) {
            Var h = g.leaky_relu(g.conv2d(x, g.param(&w), g.param(&b), 2, 1), 0.2);
            return g.matmul(g.flatten_images(h), g.param(&f));
        });
    };

    losses::GradBuffer grads({&cw, &cb, &fw});
    Rng gp_rng(7);
    gradient_penalty_apply(critic_with(cw, cb, fw), real, fake, gp_rng, 1.0, grads);

    // finite differences of gradient_penalty_value over a few coordinates
    const double h = 1e-5;
    double max_rel = 0.0;
    std::vector<Tensor*> params = {&cw, &cb, &fw};
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = *params[pi];
        for (int64_t i = 0; i < p.numel(); i += std::max<int64_t>(1, p.numel() / 5)) {
            double saved = p[i];
            p[i] = saved + h;
            Rng r1(7);
            double fp = gradient_penalty_value(critic_with(cw, cb, fw), real, fake, r1);
            p[i] = saved - h;
            Rng r2(7);
            double fm = gradient_penalty_value(critic_with(cw, cb, fw), real, fake, r2);
            p[i] = saved;
            double fd = (fp - fm) / (2 * h);
            double an = grads.grads[pi][i];
            double denom = std::max({std::abs(fd), std::abs(an), 1e-4});
            max_rel = std::max(max_rel, std::abs(fd - an) / denom);
        }
    }
    CHECK(max_rel < 1e-3);
}
