#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "credmort/cart.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <random>

using namespace credmort;

namespace {

std::vector<double> ages(int first, int last) {
    std::vector<double> x;
    for (int a = first; a <= last; ++a) x.push_back(a);
    return x;
}

// Brute-force single split minimising the within-group sum of squares.
std::size_t best_split(const std::vector<double>& y) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t at = 0;
    for (std::size_t s = 1; s < y.size(); ++s) {
        double sse = 0.0;
        for (auto [lo, hi] : {std::pair{std::size_t{0}, s}, std::pair{s, y.size()}}) {
            double m = 0.0;
            for (std::size_t i = lo; i < hi; ++i) m += y[i];
            m /= static_cast<double>(hi - lo);
            for (std::size_t i = lo; i < hi; ++i) sse += (y[i] - m) * (y[i] - m);
        }
        if (sse < best) {
            best = sse;
            at = s;
        }
    }
    return at;
}

}  // namespace

TEST_CASE("constant input is one bin") {
    const auto x = ages(16, 85);
    const std::vector<double> y(x.size(), 0.42);
    const auto f = cart_bin(x, y);
    REQUIRE(f.bins() == 1);
    CHECK(f.bin_means[0] == doctest::Approx(0.42).epsilon(1e-15));
    for (double v : f.fitted) CHECK(v == doctest::Approx(0.42).epsilon(1e-15));
}

TEST_CASE("noise-free step is split at the jump") {
    const auto x = ages(16, 85);
    std::vector<double> y;
    for (double a : x) y.push_back(a < 50 ? 0.75 : 1.25);
    const auto f = cart_bin(x, y);
    REQUIRE(f.bins() == 2);
    CHECK(f.bin_starts[0] == 16.0);
    CHECK(f.bin_starts[1] == 50.0);
    CHECK(f.bin_means[0] == 0.75);
    CHECK(f.bin_means[1] == 1.25);
    CHECK(f.predict(49.5) == 0.75);
    CHECK(f.predict(50) == 1.25);
    CHECK(f.predict(200) == 1.25);
}

TEST_CASE("noisy step split agrees with brute-force search") {
    for (int seed = 0; seed < 20; ++seed) {
        std::mt19937_64 gen(seed);
        std::normal_distribution<double> z(0.0, 0.05);
        const auto x = ages(20, 79);
        std::vector<double> y;
        const int jump = 30 + seed;
        for (double a : x) y.push_back((a < jump ? 1.0 : 1.5) + z(gen));
        const auto f = cart_bin(x, y);
        REQUIRE(f.bins() >= 2);
        CHECK(f.bin_starts[1] == x[best_split(y)]);
    }
}

TEST_CASE("pure noise collapses to at most two bins") {
    int small = 0;
    for (int seed = 0; seed < 100; ++seed) {
        std::mt19937_64 gen(100 + seed);
        std::normal_distribution<double> z(1.0, 0.1);
        const auto x = ages(16, 85);
        std::vector<double> y;
        for (std::size_t i = 0; i < x.size(); ++i) y.push_back(z(gen));
        if (cart_bin(x, y).bins() <= 2) ++small;
    }
    MESSAGE("<= 2 bins in " << small << "/100");
    CHECK(small >= 80);
}

TEST_CASE("bins are contiguous and fitted values are weighted bin means") {
    std::mt19937_64 gen(5);
    std::normal_distribution<double> z(0.0, 0.02);
    std::uniform_real_distribution<double> u(0.5, 2.0);
    const auto x = ages(0, 59);
    std::vector<double> y, w;
    for (double a : x) {
        y.push_back((a < 20 ? 0.2 : a < 40 ? 0.6 : 0.3) + z(gen));
        w.push_back(u(gen));
    }
    const auto f = cart_bin(x, y, w);
    REQUIRE(f.fitted.size() == x.size());
    for (std::size_t b = 0; b < f.bins(); ++b) {
        const double lo = f.bin_starts[b];
        const double hi = b + 1 < f.bins() ? f.bin_starts[b + 1] : 1e300;
        double sw = 0.0, swy = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            if (x[i] >= lo && x[i] < hi) {
                sw += w[i];
                swy += w[i] * y[i];
                CHECK(f.fitted[i] == f.bin_means[b]);
            }
        }
        CHECK(f.bin_means[b] == doctest::Approx(swy / sw).epsilon(1e-12));
        if (b > 0) CHECK(f.bin_starts[b] > f.bin_starts[b - 1]);
    }
    CHECK(f.bins() == 3);
}

TEST_CASE("single point and input checks") {
    const std::vector<double> x{40}, y{0.3};
    const auto f = cart_bin(x, y);
    CHECK(f.bins() == 1);
    CHECK(f.bin_means[0] == 0.3);
    const std::vector<double> bad_x{1, 1, 2}, bad_y{0, 0, 0};
    CHECK_THROWS_AS((void)cart_bin(bad_x, bad_y), std::invalid_argument);
    const std::vector<double> xs{1, 2}, ys{1};
    CHECK_THROWS_AS((void)cart_bin(xs, ys), std::invalid_argument);
}

TEST_CASE("one-SE rule never picks a larger tree than the minimum-error rule") {
    for (int seed = 0; seed < 30; ++seed) {
        std::mt19937_64 gen(seed);
        std::normal_distribution<double> z(0.0, 0.2);
        const auto x = ages(0, 69);
        std::vector<double> y;
        for (double a : x) y.push_back(std::sin(a / 10.0) + z(gen));
        CartOptions min_err;
        min_err.one_se_rule = false;
        CHECK(cart_bin(x, y).bins() <= cart_bin(x, y, {}, min_err).bins());
    }
}
