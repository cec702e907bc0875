#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fieldsc/export.hpp"
#include "fieldsc/random.hpp"

namespace viz = fieldsc::viz;
namespace fs = std::filesystem;
using fieldsc::DomainError;
using fieldsc::IoError;
using fieldsc::Rng;
using fieldsc::ShapeError;
using fieldsc::ad::Tensor;

namespace {

fs::path temp_file(const char* stem, const char* ext) {
    static int counter = 0;
    return fs::temp_directory_path() /
           (std::string(stem) + "_" + std::to_string(Catch::rngSeed()) + "_" +
            std::to_string(counter++) + ext);
}

}  // namespace

TEST_CASE("depth quantization") {
    SECTION("endpoints and clamping") {
        auto q = viz::quantize_depth({0.5f, 25.0f, 0.0f, 100.0f, 12.75f}, 0.5f, 25.0f);
        REQUIRE(q[0] == 0);
        REQUIRE(q[1] == 65535);
        REQUIRE(q[2] == 0);      // below near clamps
        REQUIRE(q[3] == 65535);  // beyond far clamps
        REQUIRE(q[4] == 32768);  // midpoint rounds up from 32767.5
    }

    SECTION("quantize/dequantize error is at most half a step") {
        Rng rng(5);
        float near = 0.5f, far = 25.0f;
        float step = (far - near) / 65535.0f;
        for (int i = 0; i < 2000; ++i) {
            float d = static_cast<float>(rng.uniform(near, far));
            float back = viz::dequantize_depth(viz::quantize_depth({d}, near, far)[0], near, far);
            REQUIRE_THAT(back, Catch::Matchers::WithinAbs(d, 0.5f * step + 1e-5f));
        }
    }

    SECTION("invalid range") {
        REQUIRE_THROWS_AS(viz::quantize_depth({1.0f}, 2.0f, 2.0f), DomainError);
    }
}

TEST_CASE("pgm files") {
    SECTION("write/read round trip is exact") {
        Rng rng(9);
        int w = 13, h = 7;
        std::vector<std::uint16_t> px(static_cast<std::size_t>(w) * h);
        for (auto& v : px) v = static_cast<std::uint16_t>(rng.uniform_int(65536));
        fs::path p = temp_file("img", ".pgm");
        {
            std::ofstream os(p, std::ios::binary);
            viz::write_pgm16(os, px, w, h);
        }
        viz::Pgm16 img = viz::read_pgm16(p);
        REQUIRE(img.width == w);
        REQUIRE(img.height == h);
        REQUIRE(img.pixels == px);
        fs::remove(p);
    }

    SECTION("header comments are skipped") {
        fs::path p = temp_file("hdr", ".pgm");
        {
            std::ofstream os(p, std::ios::binary);
            os << "P5\n# a comment\n2 1\n# another\n65535\n";
            const char data[4] = {0x12, 0x34, 0x00, 0x01};
            os.write(data, 4);
        }
        viz::Pgm16 img = viz::read_pgm16(p);
        REQUIRE(img.width == 2);
        REQUIRE(img.pixels[0] == 0x1234);
        REQUIRE(img.pixels[1] == 0x0001);
        fs::remove(p);
    }

    SECTION("validation") {
        std::ostringstream os;
        REQUIRE_THROWS_AS(viz::write_pgm16(os, {1, 2, 3}, 2, 2), ShapeError);
        fs::path p = temp_file("trunc", ".pgm");
        {
            std::ofstream f(p, std::ios::binary);
            f << "P5\n4 4\n65535\n";  // header promises 32 bytes, none follow
        }
        REQUIRE_THROWS_AS(viz::read_pgm16(p), IoError);
        fs::remove(p);
    }
}

TEST_CASE("symmetric eigensolver") {
    SECTION("hand-checked 2x2") {
        viz::EigenResult e = viz::eigen_symmetric({2, 1, 1, 2}, 2);
        REQUIRE_THAT(e.values[0], Catch::Matchers::WithinAbs(3.0, 1e-12));
        REQUIRE_THAT(e.values[1], Catch::Matchers::WithinAbs(1.0, 1e-12));
        double inv_sqrt2 = 1.0 / std::sqrt(2.0);
        // first eigenvector is (1,1)/sqrt(2) up to sign
        REQUIRE_THAT(std::fabs(e.vectors[0 * 2 + 0]),
                     Catch::Matchers::WithinAbs(inv_sqrt2, 1e-12));
        REQUIRE_THAT(e.vectors[0 * 2 + 0] * e.vectors[1 * 2 + 0],
                     Catch::Matchers::WithinAbs(0.5, 1e-12));
    }

    SECTION("reconstructs a planted spectrum") {
        Rng rng(31);
        int n = 6;
        for (int trial = 0; trial < 20; ++trial) {
            // random orthogonal basis via Gram-Schmidt on gaussian vectors
            std::vector<std::vector<double>> q;
            while (static_cast<int>(q.size()) < n) {
                std::vector<double> v(static_cast<std::size_t>(n));
                for (auto& x : v) x = rng.normal();
                for (const auto& u : q) {
                    double d = 0;
                    for (int i = 0; i < n; ++i) d += v[static_cast<std::size_t>(i)] * u[static_cast<std::size_t>(i)];
                    for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] -= d * u[static_cast<std::size_t>(i)];
                }
                double norm = 0;
                for (double x : v) norm += x * x;
                if (norm < 1e-6) continue;
                norm = std::sqrt(norm);
                for (auto& x : v) x /= norm;
                q.push_back(v);
            }
            std::vector<double> lambda(static_cast<std::size_t>(n));
            for (int i = 0; i < n; ++i) lambda[static_cast<std::size_t>(i)] = rng.uniform(-4.0, 4.0);
            std::vector<double> a(static_cast<std::size_t>(n) * n, 0.0);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j)
                    for (int k = 0; k < n; ++k)
                        a[static_cast<std::size_t>(i) * n + j] +=
                            lambda[static_cast<std::size_t>(k)] * q[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)] *
                            q[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)];

            viz::EigenResult e = viz::eigen_symmetric(a, n);
            std::vector<double> expect = lambda;
            std::sort(expect.begin(), expect.end(), std::greater<>());
            for (int i = 0; i < n; ++i)
                REQUIRE_THAT(e.values[static_cast<std::size_t>(i)],
                             Catch::Matchers::WithinAbs(expect[static_cast<std::size_t>(i)], 1e-9));
            // residual ||A v - lambda v|| per eigenpair
            for (int j = 0; j < n; ++j) {
                for (int i = 0; i < n; ++i) {
                    double av = 0;
                    for (int k = 0; k < n; ++k)
                        av += a[static_cast<std::size_t>(i) * n + k] *
                              e.vectors[static_cast<std::size_t>(k) * n + j];
                    REQUIRE_THAT(av, Catch::Matchers::WithinAbs(
                                         e.values[static_cast<std::size_t>(j)] *
                                             e.vectors[static_cast<std::size_t>(i) * n + j],
                                         1e-8));
                }
            }
        }
    }

    SECTION("shape validation") {
        REQUIRE_THROWS_AS(viz::eigen_symmetric({1, 2, 3}, 2), ShapeError);
    }
}

TEST_CASE("feature pca image") {
    SECTION("single channel becomes a red ramp") {
        int h = 4, w = 8;
        Tensor f = Tensor::zeros({1, h, w});
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                f.mutable_values()[static_cast<std::size_t>(y) * w + x] = static_cast<float>(x);
        auto rgb = viz::feature_pca_rgb(f);
        REQUIRE(rgb.size() == static_cast<std::size_t>(h) * w * 3);
        for (int y = 0; y < h; ++y) {
            REQUIRE(rgb[static_cast<std::size_t>(y) * w * 3 + 0] == 0);    // x = 0 column
            REQUIRE(rgb[(static_cast<std::size_t>(y) * w + w - 1) * 3] == 255);
        }
        // monotone along x (sign convention keeps the loading positive)
        for (int x = 1; x < w; ++x)
            REQUIRE(rgb[static_cast<std::size_t>(x) * 3] >= rgb[static_cast<std::size_t>(x - 1) * 3]);
        // green and blue channels are padding
        for (std::size_t i = 0; i < rgb.size(); i += 3) {
            REQUIRE(rgb[i + 1] == 0);
            REQUIRE(rgb[i + 2] == 0);
        }
    }

    SECTION("constant features produce a black image") {
        Tensor f = Tensor::full({4, 3, 3}, 2.5f);
        auto rgb = viz::feature_pca_rgb(f);
        for (auto v : rgb) REQUIRE(v == 0);
    }

    SECTION("deterministic across calls") {
        Rng rng(123);
        Tensor f = Tensor::zeros({6, 5, 7});
        for (auto& v : f.mutable_values()) v = static_cast<float>(rng.normal());
        REQUIRE(viz::feature_pca_rgb(f) == viz::feature_pca_rgb(f));
    }

    SECTION("dominant direction lands in the red channel") {
        // channel 0 carries a big signal, channel 1 a small one
        Rng rng(7);
        int h = 6, w = 6;
        Tensor f = Tensor::zeros({2, h, w});
        std::size_t n = static_cast<std::size_t>(h) * w;
        for (std::size_t i = 0; i < n; ++i) {
            f.mutable_values()[i] = 10.0f * static_cast<float>(rng.normal());
            f.mutable_values()[n + i] = 0.1f * static_cast<float>(rng.normal());
        }
        auto rgb = viz::feature_pca_rgb(f);
        // red must correlate with channel 0 ordering: the max-|value| pixel
        // maps to an extreme red value
        std::size_t arg_lo = 0, arg_hi = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (f.values()[i] < f.values()[arg_lo]) arg_lo = i;
            if (f.values()[i] > f.values()[arg_hi]) arg_hi = i;
        }
        REQUIRE(rgb[arg_hi * 3] == 255);
        REQUIRE(rgb[arg_lo * 3] == 0);
    }

    SECTION("shape validation") {
        REQUIRE_THROWS_AS(viz::feature_pca_rgb(Tensor::zeros({3, 4})), ShapeError);
    }
}

TEST_CASE("ply export") {
    SECTION("zero vertices") {
        std::ostringstream os;
        viz::write_ply(os, {});
        std::string text = os.str();
        REQUIRE(text.find("element vertex 0\n") != std::string::npos);
        REQUIRE(text.substr(text.size() - 11) == "end_header\n");
    }

    SECTION("vertices serialize with colors") {
        std::ostringstream os;
        viz::PlyVertex v;
        v.p = {1.5f, -2.0f, 3.0f};
        v.r = 10;
        v.g = 20;
        v.b = 30;
        viz::write_ply(os, {v});
        std::string text = os.str();
        REQUIRE(text.find("element vertex 1\n") != std::string::npos);
        REQUIRE(text.find("1.5 -2 3 10 20 30\n") != std::string::npos);
    }

    SECTION("class palette is stable and distinct") {
        for (int a = 0; a < 5; ++a)
            for (int b = a + 1; b < 5; ++b)
                REQUIRE(viz::class_color(a) != viz::class_color(b));
        REQUIRE(viz::class_color(99) == viz::class_color(-7));  // shared fallback
    }
}
