#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fieldsc/field.hpp"
#include "fieldsc/losses.hpp"
#include "fieldsc/random.hpp"
#include "support/refs.hpp"

using fieldsc::Rng;
using fieldsc::ad::Tensor;
namespace ad = fieldsc::ad;
namespace ls = fieldsc::losses;

namespace {

refs::DArr random_arr(Rng& rng, std::vector<int> shape, double lo = -1.0, double hi = 1.0) {
    refs::DArr out = refs::DArr::zeros(std::move(shape));
    for (auto& x : out.v) x = rng.uniform(lo, hi);
    return out;
}

refs::DArr dconst(double v) {
    refs::DArr s = refs::DArr::zeros({});
    s.v[0] = v;
    return s;
}

// Double-precision local SSIM map over valid 3x3 windows.
refs::DArr dssim_map(const refs::DArr& x, const refs::DArr& y) {
    refs::DArr mx = refs::dbox3(x), my = refs::dbox3(y);
    refs::DArr vx = refs::dsub(refs::dbox3(refs::dmul(x, x)), refs::dmul(mx, mx));
    refs::DArr vy = refs::dsub(refs::dbox3(refs::dmul(y, y)), refs::dmul(my, my));
    refs::DArr cov = refs::dsub(refs::dbox3(refs::dmul(x, y)), refs::dmul(mx, my));
    refs::DArr num = refs::dmul(refs::dadd(refs::dscale(refs::dmul(mx, my), 2.0), dconst(1e-4)),
                                refs::dadd(refs::dscale(cov, 2.0), dconst(9e-4)));
    refs::DArr den =
        refs::dmul(refs::dadd(refs::dadd(refs::dmul(mx, mx), refs::dmul(my, my)), dconst(1e-4)),
                   refs::dadd(refs::dadd(vx, vy), dconst(9e-4)));
    return refs::ddiv(num, den);
}

double dmean(const refs::DArr& a) {
    double s = 0;
    for (double v : a.v) s += v;
    return s / static_cast<double>(a.v.size());
}

}  // namespace

TEST_CASE("ssim") {
    Rng rng(41);

    SECTION("identical patches score 1") {
        refs::DArr x = random_arr(rng, {3, 5, 5}, 0.0, 1.0);
        Tensor t = x.to_tensor();
        REQUIRE_THAT(ls::ssim(t, t).item(), Catch::Matchers::WithinAbs(1.0f, 1e-5f));
    }

    SECTION("constant zero versus constant one") {
        Tensor x = Tensor::zeros({1, 4, 4});
        Tensor y = Tensor::full({1, 4, 4}, 1.0f);
        float want = 1e-4f / (1.0f + 1e-4f);
        REQUIRE_THAT(ls::ssim(x, y).item(), Catch::Matchers::WithinRel(want, 1e-5f));
    }

    SECTION("symmetry and double reference") {
        refs::DArr x = random_arr(rng, {2, 5, 6}, 0.0, 1.0);
        refs::DArr y = random_arr(rng, {2, 5, 6}, 0.0, 1.0);
        Tensor tx = x.to_tensor(), ty = y.to_tensor();
        float a = ls::ssim(tx, ty).item(), b = ls::ssim(ty, tx).item();
        REQUIRE_THAT(a, Catch::Matchers::WithinAbs(b, 1e-7f));
        REQUIRE_THAT(a, Catch::Matchers::WithinRel(static_cast<float>(dmean(dssim_map(x, y))), 1e-4f));
    }

    SECTION("gradient matches finite differences") {
        refs::DArr x = random_arr(rng, {1, 4, 4}, 0.2, 0.8);
        refs::DArr y = random_arr(rng, {1, 4, 4}, 0.2, 0.8);
        auto bad = refs::check_gradients(
            [&](std::vector<Tensor>& in) { return ls::ssim(in[0], in[1]); },
            [&](const std::vector<refs::DArr>& in) { return dmean(dssim_map(in[0], in[1])); },
            {x, y});
        if (bad) {
            INFO("param " << bad->param << " idx " << bad->index << " analytic " << bad->analytic
                          << " fd " << bad->fd);
            FAIL("ssim gradient mismatch");
        }
        SUCCEED();
    }

    SECTION("shape errors") {
        REQUIRE_THROWS_AS(ls::ssim(Tensor::zeros({1, 4, 4}), Tensor::zeros({1, 4, 5})),
                          fieldsc::ShapeError);
        REQUIRE_THROWS_AS(ls::ssim(Tensor::zeros({1, 2, 4}), Tensor::zeros({1, 2, 4})),
                          fieldsc::ShapeError);
    }
}

TEST_CASE("photometric loss") {
    Rng rng(42);
    ls::LossWeights w;

    SECTION("a perfect reconstruction among the sources zeroes the patch") {
        refs::DArr t = random_arr(rng, {1, 3, 4, 4}, 0.0, 1.0);
        Tensor target = t.to_tensor();
        refs::DArr noisy = random_arr(rng, {1, 3, 4, 4}, 0.0, 1.0);
        ls::PhotometricResult r = ls::photometric_loss(
            target, {noisy.to_tensor(), target}, {{1}, {1}}, w);
        REQUIRE(r.counted == 1);
        REQUIRE_THAT(r.loss.item(), Catch::Matchers::WithinAbs(0.0f, 1e-6f));
    }

    SECTION("pure L1 with a constant offset") {
        ls::LossWeights pure;
        pure.lambda_l1 = 1.0f;
        pure.lambda_ssim = 0.0f;
        Tensor target = Tensor::full({2, 3, 4, 4}, 0.5f);
        Tensor recon = Tensor::full({2, 3, 4, 4}, 0.6f);
        ls::PhotometricResult r = ls::photometric_loss(target, {recon}, {{1, 1}}, pure);
        REQUIRE_THAT(r.loss.item(), Catch::Matchers::WithinAbs(0.1f, 1e-6f));
    }

    SECTION("adding a worse source never increases the loss, and min is per patch") {
        refs::DArr t = random_arr(rng, {3, 3, 5, 5}, 0.0, 1.0);
        refs::DArr r1 = random_arr(rng, {3, 3, 5, 5}, 0.0, 1.0);
        refs::DArr r2 = random_arr(rng, {3, 3, 5, 5}, 0.0, 1.0);
        Tensor target = t.to_tensor();
        ls::PhotometricResult one = ls::photometric_loss(target, {r1.to_tensor()}, {{1, 1, 1}}, w);
        ls::PhotometricResult two = ls::photometric_loss(
            target, {r1.to_tensor(), r2.to_tensor()}, {{1, 1, 1}, {1, 1, 1}}, w);
        REQUIRE(two.loss.item() <= one.loss.item() + 1e-7f);

        // Removing the argmin source changes the loss; removing another does not.
        ls::PhotometricResult only_r2 = ls::photometric_loss(target, {r2.to_tensor()}, {{1, 1, 1}}, w);
        for (int p = 0; p < 3; ++p) {
            float a = one.per_patch.values()[static_cast<std::size_t>(p)];
            float b = only_r2.per_patch.values()[static_cast<std::size_t>(p)];
            float m = two.per_patch.values()[static_cast<std::size_t>(p)];
            REQUIRE_THAT(m, Catch::Matchers::WithinAbs(std::min(a, b), 1e-6f));
        }
    }

    SECTION("invalid reconstructions are masked; fully invalid patches are dropped") {
        Tensor target = Tensor::full({2, 3, 4, 4}, 0.5f);
        Tensor good = target;
        Tensor bad_t = Tensor::zeros({2, 3, 4, 4});
        // Source 0 valid only for patch 1 and is perfect; source 1 valid for
        // patch 1 but poor. Patch 0 has no valid source at all.
        ls::PhotometricResult r =
            ls::photometric_loss(target, {good, bad_t}, {{0, 1}, {0, 1}}, w);
        REQUIRE(r.counted == 1);
        REQUIRE(r.patch_used == std::vector<std::uint8_t>{0, 1});
        REQUIRE_THAT(r.loss.item(), Catch::Matchers::WithinAbs(0.0f, 1e-6f));

        ls::PhotometricResult none =
            ls::photometric_loss(target, {good}, {{0, 0}}, w);
        REQUIRE(none.counted == 0);
        REQUIRE(none.loss.item() == 0.0f);
    }

    SECTION("gradient w.r.t. the reconstruction matches finite differences") {
        refs::DArr t = random_arr(rng, {2, 3, 4, 4}, 0.3, 0.7);
        // Keep |target - recon| well away from the L1 kink so central
        // differences see a smooth function.
        refs::DArr r0 = t;
        for (auto& x : r0.v) {
            double off = rng.uniform(0.05, 0.2);
            x += rng.uniform() < 0.5 ? -off : off;
        }
        Tensor target = t.to_tensor();
        auto bad = refs::check_gradients(
            [&](std::vector<Tensor>& in) {
                return ls::photometric_loss(target, {in[0]}, {{1, 1}}, w).loss;
            },
            [&](const std::vector<refs::DArr>& in) {
                double total = 0;
                for (int p = 0; p < 2; ++p) {
                    refs::DArr tp({3, 4, 4}, {}), rp({3, 4, 4}, {});
                    tp.v.assign(t.v.begin() + p * 48, t.v.begin() + (p + 1) * 48);
                    rp.v.assign(in[0].v.begin() + p * 48, in[0].v.begin() + (p + 1) * 48);
                    refs::DArr diff = refs::dsub(tp, rp);
                    double l1 = 0;
                    for (double d : diff.v) l1 += std::fabs(d);
                    l1 /= 48.0;
                    double s = dmean(dssim_map(tp, rp));
                    total += w.lambda_l1 * l1 + w.lambda_ssim * 0.5 * (1.0 - s);
                }
                return total / 2.0;
            },
            {r0});
        if (bad) {
            INFO("idx " << bad->index << " analytic " << bad->analytic << " fd " << bad->fd);
            FAIL("photometric gradient mismatch");
        }
        SUCCEED();
    }
}

TEST_CASE("edge-aware smoothness") {
    SECTION("constant maps cost nothing") {
        Tensor map = Tensor::full({1, 4, 5}, 3.0f);
        Tensor img = Tensor::full({3, 4, 5}, 0.5f);
        REQUIRE(ls::edge_aware_smoothness(map, img).item() == 0.0f);
    }

    SECTION("unit ramp on a constant image costs exactly 1") {
        Tensor map({1, 1, 3}, {0.0f, 1.0f, 2.0f});
        Tensor img = Tensor::full({3, 1, 3}, 0.2f);
        REQUIRE_THAT(ls::edge_aware_smoothness(map, img).item(),
                     Catch::Matchers::WithinAbs(1.0f, 1e-6f));
    }

    SECTION("sharper image edges reduce the penalty") {
        Tensor map({1, 1, 3}, {0.0f, 1.0f, 2.0f});
        Tensor flat = Tensor::full({3, 1, 3}, 0.2f);
        Tensor edgy = Tensor::zeros({3, 1, 3});
        edgy.mutable_values()[1] = 1.0f;  // strong horizontal edge in channel 0
        edgy.mutable_values()[4] = 1.0f;
        edgy.mutable_values()[7] = 1.0f;
        REQUIRE(ls::edge_aware_smoothness(map, edgy).item() <
                ls::edge_aware_smoothness(map, flat).item());
    }

    SECTION("matches a double reference and finite differences") {
        Rng rng(43);
        refs::DArr map = random_arr(rng, {1, 2, 3, 4});
        // Keep forward differences away from zero so |.| is smooth.
        for (std::size_t i = 0; i < map.v.size(); ++i) map.v[i] += 0.5 * static_cast<double>(i);
        refs::DArr img = random_arr(rng, {1, 3, 3, 4}, 0.0, 1.0);
        Tensor img_t = img.to_tensor();

        auto ref = [&](const std::vector<refs::DArr>& in) {
            const refs::DArr& m = in[0];
            double xs = 0, ys = 0;
            int xc = 0, yc = 0;
            auto mat = [&](const refs::DArr& a, int c, int y, int x, int ch_count) {
                return a.v[((static_cast<std::size_t>(c)) * 3 + y) * 4 + x +
                           0 * static_cast<std::size_t>(ch_count)];
            };
            (void)mat;
            for (int c = 0; c < 2; ++c)
                for (int y = 0; y < 3; ++y)
                    for (int x = 0; x + 1 < 4; ++x) {
                        double g = std::fabs(m.v[(static_cast<std::size_t>(c) * 3 + y) * 4 + x + 1] -
                                             m.v[(static_cast<std::size_t>(c) * 3 + y) * 4 + x]);
                        double ig = 0;
                        for (int ch = 0; ch < 3; ++ch)
                            ig += std::fabs(
                                img.v[(static_cast<std::size_t>(ch) * 3 + y) * 4 + x + 1] -
                                img.v[(static_cast<std::size_t>(ch) * 3 + y) * 4 + x]);
                        xs += g * std::exp(-ig / 3.0);
                        ++xc;
                    }
            for (int c = 0; c < 2; ++c)
                for (int y = 0; y + 1 < 3; ++y)
                    for (int x = 0; x < 4; ++x) {
                        double g = std::fabs(m.v[(static_cast<std::size_t>(c) * 3 + y + 1) * 4 + x] -
                                             m.v[(static_cast<std::size_t>(c) * 3 + y) * 4 + x]);
                        double ig = 0;
                        for (int ch = 0; ch < 3; ++ch)
                            ig += std::fabs(
                                img.v[(static_cast<std::size_t>(ch) * 3 + y + 1) * 4 + x] -
                                img.v[(static_cast<std::size_t>(ch) * 3 + y) * 4 + x]);
                        ys += g * std::exp(-ig / 3.0);
                        ++yc;
                    }
            return xs / xc + ys / yc;
        };

        refs::DArr map3 = map;
        map3.shape = {2, 3, 4};
        Tensor got = ls::edge_aware_smoothness(map3.to_tensor(),
                                               ad::reshape(img_t, {3, 3, 4}));
        REQUIRE_THAT(got.item(), Catch::Matchers::WithinRel(static_cast<float>(ref({map})), 1e-4f));

        auto bad = refs::check_gradients(
            [&](std::vector<Tensor>& in) {
                return ls::edge_aware_smoothness_batch(in[0], img_t);
            },
            ref, {map});
        if (bad) {
            INFO("idx " << bad->index << " analytic " << bad->analytic << " fd " << bad->fd);
            FAIL("smoothness gradient mismatch");
        }
        SUCCEED();
    }
}

TEST_CASE("inverse depth normalization") {
    SECTION("constant depth maps to ones") {
        Tensor d = Tensor::full({2, 3}, 7.0f);
        Tensor n = ls::normalize_inverse_depth(d);
        for (float v : n.values()) REQUIRE_THAT(v, Catch::Matchers::WithinAbs(1.0f, 1e-6f));
    }

    SECTION("hand case [1,3]") {
        Tensor d({2}, {1.0f, 3.0f});
        Tensor n = ls::normalize_inverse_depth(d);
        REQUIRE_THAT(n.values()[0], Catch::Matchers::WithinRel(1.5f, 1e-5f));
        REQUIRE_THAT(n.values()[1], Catch::Matchers::WithinRel(0.5f, 1e-5f));
    }

    SECTION("scale invariance") {
        Rng rng(44);
        Tensor d = Tensor::zeros({8});
        for (auto& x : d.mutable_values()) x = static_cast<float>(rng.uniform(0.5, 10.0));
        Tensor n1 = ls::normalize_inverse_depth(d);
        Tensor n2 = ls::normalize_inverse_depth(ad::scale(d, 2.0f));
        for (std::size_t i = 0; i < n1.size(); ++i)
            REQUIRE_THAT(n1.values()[i], Catch::Matchers::WithinRel(n2.values()[i], 1e-5f));
    }

    SECTION("per-patch batch variant matches the scalar op applied per entry") {
        Rng rng(45);
        Tensor d = Tensor::zeros({2, 2, 3});
        for (auto& x : d.mutable_values()) x = static_cast<float>(rng.uniform(0.5, 10.0));
        Tensor batch = ls::normalize_inverse_depth_batch(d);
        for (int p = 0; p < 2; ++p) {
            Tensor one = ls::normalize_inverse_depth(
                ad::slice(d, {p, 0, 0}, {1, 2, 3}));
            for (int i = 0; i < 6; ++i)
                REQUIRE_THAT(batch.values()[static_cast<std::size_t>(p) * 6 + i],
                             Catch::Matchers::WithinRel(one.values()[static_cast<std::size_t>(i)], 1e-6f));
        }
    }

    SECTION("rejects nonpositive depth") {
        REQUIRE_THROWS_AS(ls::normalize_inverse_depth(Tensor({2}, {1.0f, 0.0f})),
                          fieldsc::DomainError);
        REQUIRE_THROWS_AS(ls::normalize_inverse_depth(Tensor({1}, {-2.0f})), fieldsc::DomainError);
    }
}

TEST_CASE("feature downsampling") {
    Rng rng(46);
    int p = 2;

    SECTION("uniform kernel on a constant block keeps the constant") {
        Tensor f = Tensor::full({3, 4, 4}, 1.25f);
        Tensor out = ls::downsample_features(f, Tensor::zeros({p * p}), p);
        REQUIRE(out.shape() == ad::Shape{3, 2, 2});
        for (float v : out.values()) REQUIRE_THAT(v, Catch::Matchers::WithinAbs(1.25f, 1e-6f));
    }

    SECTION("a saturated kernel picks the top-left sample of each block") {
        refs::DArr f = random_arr(rng, {2, 4, 6});
        Tensor logits = Tensor::zeros({p * p});
        logits.mutable_values()[0] = 50.0f;
        Tensor out = ls::downsample_features(f.to_tensor(), logits, p);
        for (int d = 0; d < 2; ++d)
            for (int i = 0; i < 2; ++i)
                for (int j = 0; j < 3; ++j)
                    REQUIRE_THAT(
                        out.values()[(static_cast<std::size_t>(d) * 2 + i) * 3 + j],
                        Catch::Matchers::WithinRel(
                            static_cast<float>(f.v[(static_cast<std::size_t>(d) * 4 + 2 * i) * 6 +
                                                   2 * j]),
                            1e-5f));
    }

    SECTION("linear in the features for a fixed kernel") {
        refs::DArr a = random_arr(rng, {2, 4, 4});
        refs::DArr b = random_arr(rng, {2, 4, 4});
        Tensor logits = Tensor::zeros({p * p});
        for (auto& x : logits.mutable_values()) x = static_cast<float>(rng.uniform(-1, 1));
        Tensor lhs = ls::downsample_features(ad::add(a.to_tensor(), b.to_tensor()), logits, p);
        Tensor rhs = ad::add(ls::downsample_features(a.to_tensor(), logits, p),
                             ls::downsample_features(b.to_tensor(), logits, p));
        for (std::size_t i = 0; i < lhs.size(); ++i)
            REQUIRE_THAT(lhs.values()[i], Catch::Matchers::WithinAbs(rhs.values()[i], 1e-6f));
    }

    SECTION("matches a double reference; gradients flow to features and kernel") {
        refs::DArr f = random_arr(rng, {2, 4, 4});
        refs::DArr logits = random_arr(rng, {4});
        refs::DArr w = random_arr(rng, {2, 2, 2});
        Tensor wc = w.to_tensor();

        auto ref = [&](const std::vector<refs::DArr>& in) {
            refs::DArr kern = refs::dsoftmax(in[1], 0);
            double s = 0;
            for (int d = 0; d < 2; ++d)
                for (int i = 0; i < 2; ++i)
                    for (int j = 0; j < 2; ++j) {
                        double cell = 0;
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx)
                                cell += kern.v[static_cast<std::size_t>(dy) * 2 + dx] *
                                        in[0].v[(static_cast<std::size_t>(d) * 4 + 2 * i + dy) * 4 +
                                                2 * j + dx];
                        s += cell * w.v[(static_cast<std::size_t>(d) * 2 + i) * 2 + j];
                    }
            return s;
        };

        Tensor got = ls::downsample_features(f.to_tensor(), logits.to_tensor(), p);
        refs::DArr kern = refs::dsoftmax(logits, 0);
        for (int d = 0; d < 2; ++d)
            for (int i = 0; i < 2; ++i)
                for (int j = 0; j < 2; ++j) {
                    double cell = 0;
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx)
                            cell += kern.v[static_cast<std::size_t>(dy) * 2 + dx] *
                                    f.v[(static_cast<std::size_t>(d) * 4 + 2 * i + dy) * 4 + 2 * j +
                                        dx];
                    REQUIRE_THAT(got.values()[(static_cast<std::size_t>(d) * 2 + i) * 2 + j],
                                 Catch::Matchers::WithinRel(static_cast<float>(cell), 1e-5f));
                }

        auto bad = refs::check_gradients(
            [&](std::vector<Tensor>& in) {
                return ad::sum(ad::mul(ls::downsample_features(in[0], in[1], p), wc));
            },
            ref, {f, logits});
        if (bad) {
            INFO("param " << bad->param << " idx " << bad->index << " analytic " << bad->analytic
                          << " fd " << bad->fd);
            FAIL("downsample gradient mismatch");
        }
        SUCCEED();
    }

    SECTION("divisibility enforced") {
        REQUIRE_THROWS_AS(ls::downsample_features(Tensor::zeros({1, 5, 4}), Tensor::zeros({4}), 2),
                          fieldsc::ShapeError);
    }
}

TEST_CASE("downsample-then-lift equals lift-then-downsample") {
    // The up-projection is affine and the kernel weights are convex, so the
    // two orders agree; training uses the cheap low-dimensional order.
    Rng rng(47);
    fieldsc::field::FieldConfig cfg;
    cfg.embed_dim = 4;
    cfg.field_dim = 3;
    cfg.target_dim = 5;
    cfg.hidden = 4;
    cfg.pe_octaves = 1;
    cfg.window = 3;
    cfg.patch = 2;
    auto params = fieldsc::field::FieldParams::init(cfg, 4, 4, rng);
    int p = cfg.patch;

    Tensor f_low = Tensor::zeros({cfg.field_dim, p, p});
    for (auto& x : f_low.mutable_values()) x = static_cast<float>(rng.uniform(-1, 1));
    Tensor logits = Tensor::zeros({p * p});
    for (auto& x : logits.mutable_values()) x = static_cast<float>(rng.uniform(-1, 1));

    // Low route: pool the p*p block, then up-project the single cell.
    Tensor pooled = ls::downsample_features(f_low, logits, p);  // [fd,1,1]
    Tensor low_route = fieldsc::field::up_project(
        ad::reshape(pooled, {1, cfg.field_dim}), params);

    // Full route: up-project each pixel, then pool.
    Tensor pixels = ad::permute(ad::reshape(f_low, {cfg.field_dim, p * p}), {1, 0});
    Tensor lifted = fieldsc::field::up_project(pixels, params);  // [p*p, D]
    Tensor full = ad::reshape(ad::permute(lifted, {1, 0}), {cfg.target_dim, p, p});
    Tensor full_route = ad::reshape(ls::downsample_features(full, logits, p), {1, cfg.target_dim});

    for (std::size_t i = 0; i < low_route.size(); ++i)
        REQUIRE_THAT(low_route.values()[i],
                     Catch::Matchers::WithinAbs(full_route.values()[i], 1e-5f));
}

TEST_CASE("feature loss") {
    Rng rng(48);
    int p = 2;

    SECTION("exact prediction costs zero; orthogonal costs one") {
        refs::DArr t = random_arr(rng, {4, 2, 2});
        Tensor target = t.to_tensor();
        Tensor rendered = Tensor::zeros({4, 4, 4});
        // With a zero rendered map and f_bar equal to the target, psi+f_bar
        // reproduces the target exactly.
        Tensor loss = ls::feature_loss(target, rendered, target, Tensor::zeros({p * p}), p);
        REQUIRE_THAT(loss.item(), Catch::Matchers::WithinAbs(0.0f, 1e-6f));

        // Orthogonal rows everywhere: target rows e0, predictions e1.
        Tensor t2 = Tensor::zeros({2, 1, 1});
        t2.mutable_values()[0] = 1.0f;
        Tensor fb = Tensor::zeros({2, 1, 1});
        fb.mutable_values()[1] = 1.0f;
        Tensor l2 = ls::feature_loss(t2, Tensor::zeros({2, 2, 2}), fb, Tensor::zeros({4}), 2);
        REQUIRE_THAT(l2.item(), Catch::Matchers::WithinAbs(1.0f, 1e-6f));
    }

    SECTION("a learned constant offset fully compensates a target offset") {
        refs::DArr base = random_arr(rng, {3, 2, 2});
        refs::DArr offset_single = random_arr(rng, {3});
        // Target = base + per-cell constant offset; rendered full-res map
        // reproduces base after pooling; f_bar = the offset.
        Tensor rendered = Tensor::zeros({3, 4, 4});
        for (int d = 0; d < 3; ++d)
            for (int y = 0; y < 4; ++y)
                for (int x = 0; x < 4; ++x)
                    rendered.mutable_values()[(static_cast<std::size_t>(d) * 4 + y) * 4 + x] =
                        static_cast<float>(base.v[(static_cast<std::size_t>(d) * 2 + y / 2) * 2 + x / 2]);
        Tensor target = Tensor::zeros({3, 2, 2});
        Tensor fbar = Tensor::zeros({3, 2, 2});
        for (int d = 0; d < 3; ++d)
            for (int c = 0; c < 4; ++c) {
                target.mutable_values()[static_cast<std::size_t>(d) * 4 + c] = static_cast<float>(
                    base.v[static_cast<std::size_t>(d) * 4 + c] + offset_single.v[static_cast<std::size_t>(d)]);
                fbar.mutable_values()[static_cast<std::size_t>(d) * 4 + c] =
                    static_cast<float>(offset_single.v[static_cast<std::size_t>(d)]);
            }
        Tensor loss = ls::feature_loss(target, rendered, fbar, Tensor::zeros({4}), 2);
        REQUIRE_THAT(loss.item(), Catch::Matchers::WithinAbs(0.0f, 1e-5f));
    }

    SECTION("zero-norm cells count as similarity zero") {
        Tensor target = Tensor::zeros({2, 1, 1});  // zero-norm target cell
        Tensor fb = Tensor::full({2, 1, 1}, 1.0f);
        int zeros = 0;
        Tensor loss = ls::feature_loss(target, Tensor::zeros({2, 2, 2}), fb, Tensor::zeros({4}), 2,
                                       &zeros);
        REQUIRE(zeros == 1);
        REQUIRE_THAT(loss.item(), Catch::Matchers::WithinAbs(1.0f, 1e-6f));
    }

    SECTION("gradients reach rendered features, kernel, and f_bar") {
        refs::DArr t = random_arr(rng, {2, 2, 2});
        refs::DArr rendered = random_arr(rng, {2, 4, 4});
        refs::DArr fbar = random_arr(rng, {2, 2, 2});
        refs::DArr logits = random_arr(rng, {4});
        Tensor target = t.to_tensor();

        auto ref = [&](const std::vector<refs::DArr>& in) {
            refs::DArr kern = refs::dsoftmax(in[2], 0);
            double cos_sum = 0;
            for (int i = 0; i < 2; ++i)
                for (int j = 0; j < 2; ++j) {
                    double dot = 0, na = 0, nb = 0;
                    for (int d = 0; d < 2; ++d) {
                        double cell = in[1].v[(static_cast<std::size_t>(d) * 2 + i) * 2 + j];
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx)
                                cell += kern.v[static_cast<std::size_t>(dy) * 2 + dx] *
                                        in[0].v[(static_cast<std::size_t>(d) * 4 + 2 * i + dy) * 4 +
                                                2 * j + dx];
                        double tv = t.v[(static_cast<std::size_t>(d) * 2 + i) * 2 + j];
                        dot += tv * cell;
                        na += tv * tv;
                        nb += cell * cell;
                    }
                    cos_sum += dot / (std::sqrt(na + 1e-30) * std::sqrt(nb + 1e-30));
                }
            return 1.0 - cos_sum / 4.0;
        };

        auto bad = refs::check_gradients(
            [&](std::vector<Tensor>& in) {
                return ls::feature_loss(target, in[0], in[1], in[2], p);
            },
            ref, {rendered, fbar, logits});
        if (bad) {
            INFO("param " << bad->param << " idx " << bad->index << " analytic " << bad->analytic
                          << " fd " << bad->fd);
            FAIL("feature loss gradient mismatch");
        }
        SUCCEED();
    }
}

TEST_CASE("total loss combination") {
    ls::LossTerms t{Tensor::scalar(0.5f), Tensor::scalar(0.2f), Tensor::scalar(0.8f),
                    Tensor::scalar(0.1f)};

    SECTION("zero weights zero the total") {
        ls::LossWeights w;
        w.lambda_p = w.lambda_s = w.lambda_f = w.lambda_fs = 0.0f;
        REQUIRE(ls::total_loss(t, w).item() == 0.0f);
    }

    SECTION("defaults and linear scaling of one term") {
        ls::LossWeights w;  // paper defaults
        ls::LossReport rep;
        float base = ls::total_loss(t, w, &rep).item();
        REQUIRE_THAT(base, Catch::Matchers::WithinRel(
                               1.0f * 0.5f + 0.001f * 0.2f + 0.2f * 0.8f + 0.25f * 0.1f, 1e-5f));
        REQUIRE(rep.photometric == 0.5f);
        REQUIRE(rep.feature == 0.8f);
        REQUIRE_THAT(rep.total, Catch::Matchers::WithinRel(base, 1e-6f));

        ls::LossWeights w2 = w;
        w2.lambda_f *= 2.0f;
        float doubled = ls::total_loss(t, w2).item();
        REQUIRE_THAT(doubled - base, Catch::Matchers::WithinRel(0.2f * 0.8f, 1e-4f));
    }

    SECTION("negative weights rejected") {
        ls::LossWeights w;
        w.lambda_s = -0.1f;
        REQUIRE_THROWS_AS(ls::total_loss(t, w), fieldsc::ConfigError);
    }
}
