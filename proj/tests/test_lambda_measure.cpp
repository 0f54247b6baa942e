#include <catch2/catch_amalgamated.hpp>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/digamma.hpp>
#include <cmath>
#include <limits>

#include "lwf/lambda_measure.hpp"

using namespace lwf;

namespace {

double factorial(long n) {
    double f = 1.0;
    for (long k = 2; k <= n; ++k) f *= double(k);
    return f;
}

double choose(long n, long k) {
    return factorial(n) / (factorial(k) * factorial(n - k));
}

}  // namespace

TEST_CASE("parser accepts single components") {
    auto m = parse_lambda("kingman");
    CHECK(m.kingman_mass == 1.0);
    CHECK(m.star_mass == 0.0);
    CHECK_FALSE(m.has_interior());

    m = parse_lambda("star");
    CHECK(m.star_mass == 1.0);

    m = parse_lambda("uniform");
    REQUIRE(m.betas.size() == 1);
    CHECK(m.betas[0].shape_a == 1.0);
    CHECK(m.betas[0].shape_b == 1.0);

    m = parse_lambda("beta:2,3.5");
    REQUIRE(m.betas.size() == 1);
    CHECK(m.betas[0].shape_a == 2.0);
    CHECK(m.betas[0].shape_b == 3.5);

    m = parse_lambda("point:0.25");
    REQUIRE(m.points.size() == 1);
    CHECK(m.points[0].z == 0.25);
}

TEST_CASE("parser folds endpoint points into atoms") {
    auto m = parse_lambda("point:0");
    CHECK(m.kingman_mass == 1.0);
    CHECK(m.points.empty());

    m = parse_lambda("point:1");
    CHECK(m.star_mass == 1.0);
    CHECK(m.points.empty());
}

TEST_CASE("parser handles weighted mixtures and whitespace") {
    auto m = parse_lambda(" 0.3*kingman + 0.45 * beta:2,2 + 0.25*point:0.7 ");
    CHECK_FALSE(m.rescaled);
    CHECK(m.kingman_mass == Catch::Approx(0.3));
    REQUIRE(m.betas.size() == 1);
    CHECK(m.betas[0].weight == Catch::Approx(0.45));
    REQUIRE(m.points.size() == 1);
    CHECK(m.points[0].weight == Catch::Approx(0.25));
    CHECK(m.total_mass() == Catch::Approx(1.0));
}

TEST_CASE("parser rescales off-unit totals and flags it") {
    auto m = parse_lambda("2*kingman + 2*star");
    CHECK(m.rescaled);
    CHECK(m.input_total == Catch::Approx(4.0));
    CHECK(m.kingman_mass == Catch::Approx(0.5));
    CHECK(m.star_mass == Catch::Approx(0.5));
}

TEST_CASE("parser supports exponent notation in weights") {
    auto m = parse_lambda("5e-1*kingman + 5E-1*star");
    CHECK_FALSE(m.rescaled);
    auto m2 = parse_lambda("1e+0*uniform");
    CHECK(m2.betas.size() == 1);
}

TEST_CASE("parser rejects malformed input with positions") {
    CHECK_THROWS_AS(parse_lambda(""), lambda_parse_error);
    CHECK_THROWS_AS(parse_lambda("gamma:1,2"), lambda_parse_error);
    CHECK_THROWS_AS(parse_lambda("beta:1"), lambda_parse_error);
    CHECK_THROWS_AS(parse_lambda("beta:0,1"), lambda_parse_error);
    CHECK_THROWS_AS(parse_lambda("beta:1,-2"), lambda_parse_error);
    CHECK_THROWS_AS(parse_lambda("point:1.5"), lambda_parse_error);
    CHECK_THROWS_AS(parse_lambda("point:"), lambda_parse_error);
    CHECK_THROWS_AS(parse_lambda("-1*kingman"), lambda_parse_error);
    CHECK_THROWS_AS(parse_lambda("kingman+"), lambda_parse_error);
    CHECK_THROWS_AS(parse_lambda("kingman++star"), lambda_parse_error);
    CHECK_THROWS_AS(parse_lambda("*kingman"), lambda_parse_error);
    CHECK_THROWS_AS(parse_lambda("kingman:3"), lambda_parse_error);

    try {
        parse_lambda("0.5*kingman + frob");
        FAIL("expected a parse error");
    } catch (const lambda_parse_error& e) {
        CHECK(std::string(e.what()).find("column 15") != std::string::npos);
        CHECK(std::string(e.what()).find("frob") != std::string::npos);
    }
}

TEST_CASE("atom rates sit on the expected group sizes") {
    const auto king = parse_lambda("kingman");
    const auto star = parse_lambda("star");
    for (long b = 2; b <= 8; ++b) {
        for (long j = 2; j <= b; ++j) {
            CHECK(lambda_rate(king, b, j) == (j == 2 ? 1.0 : 0.0));
            CHECK(lambda_rate(star, b, j) == (j == b ? 1.0 : 0.0));
        }
    }
}

TEST_CASE("uniform rates match the factorial form") {
    const auto m = parse_lambda("uniform");
    for (long b = 2; b <= 12; ++b)
        for (long j = 2; j <= b; ++j) {
            const double expect = factorial(j - 2) * factorial(b - j) / factorial(b - 1);
            CHECK(lambda_rate(m, b, j) == Catch::Approx(expect).epsilon(1e-13));
        }
}

TEST_CASE("interior point rates are pure powers") {
    const auto m = parse_lambda("point:0.5");
    CHECK(lambda_rate(m, 5, 3) == Catch::Approx(0.125).epsilon(1e-14));
    const auto m2 = parse_lambda("point:0.3");
    for (long b = 2; b <= 10; ++b)
        for (long j = 2; j <= b; ++j)
            CHECK(lambda_rate(m2, b, j) ==
                  Catch::Approx(std::pow(0.3, double(j - 2)) * std::pow(0.7, double(b - j)))
                      .epsilon(1e-13));
}

TEST_CASE("beta rates agree with independent quadrature") {
    const auto m = parse_lambda("beta:2.5,1.5");
    const double lb = std::exp(log_beta(2.5, 1.5));
    for (long b : {2L, 3L, 5L, 9L})
        for (long j = 2; j <= b; ++j) {
            const auto f = [&](double z) {
                return std::pow(z, double(j - 2) + 1.5) * std::pow(1.0 - z, double(b - j) + 0.5) /
                       lb;
            };
            const double q = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
                f, 0.0, 1.0, 15, 1e-14);
            CHECK(lambda_rate(m, b, j) == Catch::Approx(q).epsilon(5e-9));
        }
}

TEST_CASE("rates satisfy the size-consistency identity") {
    for (const char* spec :
         {"kingman", "star", "uniform", "beta:0.5,0.5", "point:0.5",
          "0.3*kingman + 0.3*beta:2,2 + 0.2*point:0.7 + 0.2*star"}) {
        const auto m = parse_lambda(spec);
        for (long b = 2; b <= 20; ++b)
            for (long j = 2; j <= b; ++j) {
                const double lhs = lambda_rate(m, b, j);
                const double rhs = lambda_rate(m, b + 1, j) + lambda_rate(m, b + 1, j + 1);
                CHECK(lhs == Catch::Approx(rhs).epsilon(1e-12).margin(1e-15));
            }
    }
}

TEST_CASE("coupling weights reduce to the closed special forms") {
    const auto king = parse_lambda("kingman");
    for (long n = 1; n <= 40; ++n) {
        // Atom at zero: only c = n+2 carries weight, and exactly (n+1)/2.
        CHECK(merger_weight(king, n, n + 2) == 0.5 * double(n + 1));
        CHECK(merger_weight(king, n, n + 3) == 0.0);
        CHECK(merger_weight_inf(king, n) == 0.0);
    }
    const auto uni = parse_lambda("uniform");
    for (long n = 1; n <= 12; ++n)
        for (long c = n + 2; c <= n + 14; ++c)
            CHECK(merger_weight(uni, n, c) ==
                  Catch::Approx(1.0 / (double(c - n - 1) * double(c - n))).epsilon(1e-12));
    const auto star = parse_lambda("star");
    for (long n = 1; n <= 7; ++n) {
        CHECK(merger_weight(star, n, n + 2) == 0.0);
        CHECK(merger_weight_inf(star, n) == Catch::Approx(1.0 / double(n)));
    }
}

TEST_CASE("coupling weights match their defining product") {
    const auto m = parse_lambda("0.4*beta:2,2 + 0.6*point:0.4");
    for (long n = 1; n <= 9; ++n)
        for (long c = n + 2; c <= n + 12; ++c) {
            const double direct =
                choose(c - 1, c - n) * lambda_rate(m, c, c - n) / double(n);
            CHECK(merger_weight(m, n, c) == Catch::Approx(direct).epsilon(1e-11));
        }
}

TEST_CASE("total collision activity has closed uniform and point values") {
    const auto uni = parse_lambda("uniform");
    for (long b = 2; b <= 40; ++b)
        CHECK(total_merger_rate(uni, b) == Catch::Approx(double(b - 1)).epsilon(1e-11));

    const auto m = parse_lambda("point:0.3");
    const double z = 0.3;
    for (long b : {2L, 5L, 12L}) {
        const double expect =
            (1.0 - std::pow(0.7, double(b)) - double(b) * z * std::pow(0.7, double(b - 1))) /
            (z * z);
        CHECK(total_merger_rate(m, b) == Catch::Approx(expect).epsilon(1e-12));
    }

    const auto king = parse_lambda("kingman");
    CHECK(total_merger_rate(king, 6) == Catch::Approx(15.0));
    const auto star = parse_lambda("star");
    CHECK(total_merger_rate(star, 6) == Catch::Approx(1.0));
    CHECK(total_merger_rate(star, 2) == Catch::Approx(1.0));
}

TEST_CASE("total collision activity equals the row sum") {
    for (const char* spec : {"beta:2,2", "0.5*uniform + 0.5*point:0.6",
                             "0.2*kingman + 0.3*star + 0.5*beta:3,1.5"}) {
        const auto m = parse_lambda(spec);
        for (long b : {2L, 3L, 7L, 15L, 31L}) {
            double sum = 0.0;
            for (long j = 2; j <= b; ++j) sum += choose(b, j) * lambda_rate(m, b, j);
            CHECK(total_merger_rate(m, b) == Catch::Approx(sum).epsilon(1e-10));
        }
    }
}

TEST_CASE("beta(2,2) total activity matches the exact rational") {
    const auto m = parse_lambda("beta:2,2");
    CHECK(total_merger_rate(m, 10) == Catch::Approx(30791.0 / 4620.0).epsilon(1e-12));
}

TEST_CASE("finite up-jump totals match series and closed values") {
    const auto uni = parse_lambda("uniform");
    for (long d = 2; d <= 30; ++d)
        CHECK(dual_up_rate_total(uni, d) == Catch::Approx(double(d - 1)).epsilon(1e-11));
    CHECK(dual_up_rate_total(uni, 1) == 0.0);

    const auto king = parse_lambda("kingman");
    for (long d = 2; d <= 10; ++d)
        CHECK(dual_up_rate_total(king, d) == Catch::Approx(0.5 * double(d) * double(d - 1)));

    // The atom at 1 feeds the boundary jump, not any finite up-jump.
    const auto star = parse_lambda("star");
    for (long d = 1; d <= 10; ++d) CHECK(dual_up_rate_total(star, d) == 0.0);

    const auto b22 = parse_lambda("beta:2,2");
    CHECK(dual_up_rate_total(b22, 6) ==
          Catch::Approx(4.414285714285714285714286).epsilon(1e-12));

    // Series cross-check: sum C(c-1, c-d+1) lambda_{c, c-d+1} over c > d.
    // Terms are positive, so the truncated sum is a lower bound; the slowest
    // decay exercised here is c^-3 (shape_b = 2), leaving a ~1e-9 tail.
    for (const char* spec : {"beta:2,2", "point:0.35", "0.5*beta:3,4 + 0.5*point:0.2"}) {
        const auto m = parse_lambda(spec);
        for (long d : {2L, 3L, 6L, 11L}) {
            double sum = 0.0;
            double tail_cap = 0.0;
            for (long c = d + 1; c <= d + 20000; ++c) {
                const double term = std::exp(log_choose(double(c - 1), double(c - d + 1)) +
                                             std::log(lambda_rate(m, c, c - d + 1)));
                sum += term;
                tail_cap = term * double(c);  // covers any decay c^-3 or faster
                if (term == 0.0) break;
            }
            const double lib = dual_up_rate_total(m, d);
            CHECK(lib >= sum * (1.0 - 1e-10));
            CHECK(lib == Catch::Approx(sum).margin(5.0 * tail_cap + 1e-12));
        }
    }
}

TEST_CASE("kernel ratio helpers are continuous across the branch point") {
    // Straddle the series/closed-form switch so tightly that the function
    // itself cannot move; any visible jump would be a branch inconsistency.
    for (long b : {10L, 100L, 2000L}) {
        const double z_lo = 0.1 / double(b) * (1.0 - 1e-9);
        const double z_hi = 0.1 / double(b) * (1.0 + 1e-9);
        const double lo = binomial_pair_tail_ratio(z_lo, 1.0 - z_lo, b);
        const double hi = binomial_pair_tail_ratio(z_hi, 1.0 - z_hi, b);
        CHECK(lo == Catch::Approx(hi).epsilon(1e-8));
    }
    for (long d : {10L, 100L, 2000L}) {
        const double z_lo = 0.05 / double(d - 1) * (1.0 - 1e-9);
        const double z_hi = 0.05 / double(d - 1) * (1.0 + 1e-9);
        const double lo = dual_up_kernel_ratio(z_lo, 1.0 - z_lo, d);
        const double hi = dual_up_kernel_ratio(z_hi, 1.0 - z_hi, d);
        CHECK(lo == Catch::Approx(hi).epsilon(1e-8));
    }
    CHECK(binomial_pair_tail_ratio(1e-12, 1.0 - 1e-12, 5) == Catch::Approx(10.0));
    CHECK(dual_up_kernel_ratio(1e-12, 1.0 - 1e-12, 5) == Catch::Approx(10.0));
}

TEST_CASE("critical selection strength handles every component family") {
    const double inf = std::numeric_limits<double>::infinity();
    CHECK(sigma_star(parse_lambda("kingman")) == inf);
    CHECK(sigma_star(parse_lambda("star")) == inf);
    CHECK(sigma_star(parse_lambda("uniform")) == inf);
    CHECK(sigma_star(parse_lambda("beta:1,3")) == inf);
    CHECK(sigma_star(parse_lambda("beta:0.5,0.5")) == inf);
    CHECK(sigma_star(parse_lambda("0.9*beta:3,2 + 0.1*kingman")) == inf);

    CHECK(sigma_star(parse_lambda("point:0.5")) ==
          Catch::Approx(2.772588722239781237668928).epsilon(1e-13));

    // For shape_a > 2 there is a digamma closed form.
    CHECK(sigma_star(parse_lambda("beta:3,2")) == Catch::Approx(3.0).epsilon(1e-11));
    {
        const double a = 3.5, b = 1.5;
        const double expect = std::exp(log_beta(a - 2.0, b) - log_beta(a, b)) *
                              (boost::math::digamma(a + b - 2.0) - boost::math::digamma(b));
        CHECK(sigma_star(parse_lambda("beta:3.5,1.5")) == Catch::Approx(expect).epsilon(1e-11));
    }

    // Frozen high-precision reference for a shape in (1, 2].
    CHECK(sigma_star(parse_lambda("beta:1.5,2")) ==
          Catch::Approx(5.794415416798359282516438).epsilon(1e-11));

    // Mixtures combine linearly.
    const double s1 = sigma_star(parse_lambda("point:0.5"));
    const double s2 = sigma_star(parse_lambda("beta:3,2"));
    CHECK(sigma_star(parse_lambda("0.25*point:0.5 + 0.75*beta:3,2")) ==
          Catch::Approx(0.25 * s1 + 0.75 * s2).epsilon(1e-11));
}

TEST_CASE("parameter validation enforces ranges and the drift condition") {
    auto p = model_params::make(parse_lambda("point:0.5"), 1.0, 0.5, 0.3);
    CHECK_NOTHROW(validate_params(p));

    p.sigma = 3.0;  // critical value is 4 ln 2 ~ 2.77
    CHECK_THROWS_AS(validate_params(p), assumption_error);
    CHECK_NOTHROW(validate_params(p, false));

    p.sigma = -0.5;
    CHECK_THROWS_AS(validate_params(p), std::invalid_argument);
    p.sigma = 1.0;
    p.theta = -1.0;
    CHECK_THROWS_AS(validate_params(p), std::invalid_argument);
    p.theta = 0.5;
    p.nu0 = 1.5;
    CHECK_THROWS_AS(validate_params(p), std::invalid_argument);
    p.nu0 = 0.3;
    p.nu1 = 0.3;
    CHECK_THROWS_AS(validate_params(p), std::invalid_argument);

    // sigma = 0 never trips the drift gate, even for atom measures.
    auto q = model_params::make(parse_lambda("kingman"), 0.0, 1.0, 0.5);
    CHECK_NOTHROW(validate_params(q));
    // Positive sigma is fine when the critical value is infinite.
    auto r = model_params::make(parse_lambda("kingman"), 5.0, 0.0, 0.0);
    CHECK_NOTHROW(validate_params(r));
}

TEST_CASE("rate table rows are cached and exported as csv") {
    rate_table tab(parse_lambda("0.5*kingman + 0.5*uniform"));
    const auto& r3 = tab.row(3);
    REQUIRE(r3.size() == 2);
    CHECK(r3[0] == Catch::Approx(0.5 + 0.5 * 0.5));
    CHECK(r3[1] == Catch::Approx(0.5 * 0.5));
    CHECK(&tab.row(3) == &r3);
    CHECK(tab.rate(3, 2) == r3[0]);
    CHECK_THROWS_AS(tab.rate(3, 4), std::invalid_argument);

    const std::string csv = tab.to_csv(3);
    CHECK(csv.find("b,j,lambda\n") == 0);
    CHECK(csv.find("\n2,2,1\n") != std::string::npos);
}

TEST_CASE("measure round-trips through its display form") {
    const auto m = parse_lambda("0.3*kingman + 0.45*beta:2,2 + 0.25*point:0.7");
    const auto m2 = parse_lambda(to_string(m));
    CHECK(m2.kingman_mass == Catch::Approx(m.kingman_mass));
    REQUIRE(m2.betas.size() == 1);
    CHECK(m2.betas[0].weight == Catch::Approx(m.betas[0].weight));
    REQUIRE(m2.points.size() == 1);
    CHECK(m2.points[0].z == Catch::Approx(m.points[0].z));
}
