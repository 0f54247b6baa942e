#include <algorithm>
#include <cmath>
#include <map>

#include <catch2/catch_amalgamated.hpp>

#include "lwf/chains.hpp"
#include "lwf/lambda_measure.hpp"
#include "lwf/recursion.hpp"

using namespace lwf;

namespace {

double move_rate(const jump_table& tab, long target) {
    for (const auto& [tgt, r] : tab.moves)
        if (tgt == target) return r;
    return 0.0;
}

model_params mixture_params() {
    auto lam = parse_lambda("0.3*kingman + 0.45*beta:2,2 + 0.15*point:0.6 + 0.1*point:1");
    return model_params::make(lam, 0.4, 0.7, 0.25);
}

}  // namespace

TEST_CASE("full line count jump tables") {
    auto p = model_params::make(parse_lambda("kingman"), 0.7, 0.0, 0.0);
    chain_system sys(p, chain_kind::k);

    const auto& t5 = sys.at(5);
    REQUIRE(t5.moves.size() == 2);
    CHECK(move_rate(t5, 4) == Catch::Approx(10.0));
    CHECK(move_rate(t5, 6) == Catch::Approx(3.5));
    CHECK(t5.total == Catch::Approx(13.5));

    auto dead = model_params::make(parse_lambda("kingman"), 0.0, 0.0, 0.0);
    chain_system still(dead, chain_kind::k);
    CHECK(still.at(1).total == 0.0);

    auto mix = mixture_params();
    chain_system msys(mix, chain_kind::k);
    for (long b : {2L, 5L, 9L, 17L}) {
        const auto& tab = msys.at(b);
        double down = 0.0;
        for (const auto& [tgt, r] : tab.moves)
            if (tgt < b) down += r;
        CHECK(down == Catch::Approx(total_merger_rate(mix.lambda, b)).epsilon(1e-10));
        CHECK(move_rate(tab, b + 1) == Catch::Approx(double(b) * mix.sigma));
    }
}

TEST_CASE("pruned line count jump tables") {
    auto p = model_params::make(parse_lambda("kingman"), 0.6, 1.0, 0.0);
    chain_system sys(p, chain_kind::l);

    const auto& t3 = sys.at(3);
    REQUIRE(t3.moves.size() == 2);
    CHECK(move_rate(t3, 2) == Catch::Approx(5.0));  // pair mergers + one-sided pruning
    CHECK(move_rate(t3, 4) == Catch::Approx(1.8));
    CHECK(t3.total == Catch::Approx(6.8));

    const auto& t1 = sys.at(1);
    REQUIRE(t1.moves.size() == 1);
    CHECK(move_rate(t1, 2) == Catch::Approx(0.6));

    auto q = model_params::make(parse_lambda("kingman"), 0.5, 2.0, 0.25);
    chain_system qsys(q, chain_kind::l);
    const auto& t4 = qsys.at(4);
    CHECK(move_rate(t4, 5) == Catch::Approx(2.0));
    CHECK(move_rate(t4, 3) == Catch::Approx(6.0 + 4.5 + 0.5));
    CHECK(move_rate(t4, 2) == Catch::Approx(0.5));
    CHECK(move_rate(t4, 1) == Catch::Approx(0.5));
    CHECK(t4.total == Catch::Approx(14.0));

    auto mix = mixture_params();
    chain_system msys(mix, chain_kind::l);
    for (long l : {1L, 2L, 6L, 13L}) {
        const double want = total_merger_rate(mix.lambda, l) + double(l) * mix.sigma +
                            double(l - 1) * mix.theta;
        CHECK(msys.at(l).total == Catch::Approx(want).epsilon(1e-10));
    }
}

TEST_CASE("companion chain jump tables") {
    auto king = model_params::make(parse_lambda("kingman"), 0.3, 0.8, 0.5);
    chain_system ksys(king, chain_kind::d);
    CHECK(ksys.at(1).total == 0.0);
    const auto& k2 = ksys.at(2);
    REQUIRE(k2.moves.size() == 3);
    CHECK(move_rate(k2, 1) == Catch::Approx(0.3));
    CHECK(move_rate(k2, 3) == Catch::Approx(1.4));
    CHECK(move_rate(k2, state_infinity) == Catch::Approx(0.4));
    CHECK(k2.total == Catch::Approx(2.1));

    auto uni = model_params::make(parse_lambda("beta:1,1"), 0.0, 0.0, 0.0);
    chain_system usys(uni, chain_kind::d);
    const auto& u3 = usys.at(3);
    CHECK(move_rate(u3, 4) == Catch::Approx(1.0).epsilon(1e-9));
    CHECK(move_rate(u3, 5) == Catch::Approx(1.0 / 3.0).epsilon(1e-9));
    CHECK(move_rate(u3, 6) == Catch::Approx(1.0 / 6.0).epsilon(1e-9));
    CHECK(move_rate(u3, state_far) == Catch::Approx(2.0 / 4094.0).epsilon(1e-6));
    CHECK(u3.total == Catch::Approx(2.0).epsilon(1e-10));

    chain_system short_range(uni, chain_kind::d, 64);
    const auto& s60 = short_range.at(60);
    const double near = 59.0 * (1.0 / 2.0 + 1.0 / 6.0 + 1.0 / 12.0 + 1.0 / 20.0);
    CHECK(move_rate(s60, state_far) == Catch::Approx(59.0 - near).epsilon(1e-9));
    CHECK(s60.total == Catch::Approx(59.0).epsilon(1e-10));

    auto star = model_params::make(parse_lambda("point:1"), 1.0, 0.0, 0.0);
    chain_system ssys(star, chain_kind::d);
    const auto& s5 = ssys.at(5);
    REQUIRE(s5.moves.size() == 2);
    CHECK(move_rate(s5, 4) == Catch::Approx(4.0));
    CHECK(move_rate(s5, state_infinity) == Catch::Approx(1.0));

    auto mix = mixture_params();
    chain_system msys(mix, chain_kind::d);
    for (long d : {2L, 4L, 10L, 25L}) {
        const double want = double(d - 1) * (mix.sigma + mix.theta) +
                            dual_up_rate_total(mix.lambda, d) + mix.lambda.star_mass;
        CHECK(msys.at(d).total == Catch::Approx(want).epsilon(1e-9));
    }
}

TEST_CASE("walks respect stop rules") {
    auto p = model_params::make(parse_lambda("kingman"), 0.0, 0.0, 0.0);
    chain_system sys(p, chain_kind::k);
    rng_stream rng(911, 1, 1);

    auto path = simulate_path(sys, 6, std::numeric_limits<double>::infinity(),
                              1000000L, 1000L, rng, 1);
    CHECK(path.stats.end == path_end::hit);
    CHECK(path.stats.final_state == 1);
    REQUIRE(path.points.size() >= 2);
    for (size_t i = 1; i < path.points.size(); ++i) {
        CHECK(path.points[i].second < path.points[i - 1].second);
        CHECK(path.points[i].first >= path.points[i - 1].first);
    }

    rng_stream rng2(911, 1, 2);
    double held = 0.0;
    auto st = run_chain(sys, 50, 1, 0.01, 1000000L, 1000000L, rng2,
                        [&](long, double dt) { held += dt; });
    CHECK(st.end == path_end::horizon);
    CHECK(held == Catch::Approx(0.01).epsilon(1e-12));

    auto boom = model_params::make(parse_lambda("point:0.7"), 5.0, 0.0, 0.0);
    chain_system bsys(boom, chain_kind::k);
    rng_stream rng3(911, 1, 3);
    auto bs = run_chain(bsys, 10, 1, std::numeric_limits<double>::infinity(), 100L,
                        100000L, rng3, [](long, double) {});
    CHECK(bs.end == path_end::capped);
    CHECK(bs.final_state > 100);
}

TEST_CASE("descent time matches the pure death chain") {
    auto p = model_params::make(parse_lambda("kingman"), 0.0, 0.0, 0.0);
    auto rows = estimate_t1(p, {5}, 40000, 20260815, 2);
    REQUIRE(rows.size() == 1);
    const auto& r = rows[0];
    CHECK(r.censored == 0);
    // mean 1/1 + 1/3 + 1/6 + 1/10, variance 1 + 1/9 + 1/36 + 1/100
    CHECK(std::abs(r.mean - 1.6) <= 3.0 * r.se);
    const double want_se = std::sqrt(1.1488888888888889 / 40000.0);
    CHECK(r.se == Catch::Approx(want_se).epsilon(0.15));
    CHECK(r.log_over_mean == Catch::Approx(std::log(5.0) / r.mean));
}

TEST_CASE("hit probabilities: star closed form") {
    auto p = model_params::make(parse_lambda("point:1"), 1.0, 0.0, 0.0);
    auto rows = estimate_omega(p, {2, 4, 8}, 20000, 77003, 2);
    REQUIRE(rows.size() == 3);
    for (const auto& r : rows) {
        const double want = 1.0 / double(r.start);
        CHECK(std::abs(r.value - want) <= 3.0 * r.se + 1e-12);
        CHECK(r.escapes == 0);
        CHECK(r.upper == Catch::Approx(r.value));
        CHECK(r.cap == 5000);  // star coefficients decay too slowly to certify
        CHECK(r.escape_bound == 1.0);
    }
}

TEST_CASE("hit probabilities match solved coefficients") {
    auto p = model_params::make(parse_lambda("beta:1,1"), 1.0, 0.0, 0.0);
    auto cv = solve_auto(p);
    auto rows = estimate_omega(p, {3, 5}, 10000, 424242, 2);
    for (const auto& r : rows) {
        const double want = cv.a[size_t(r.start - 1)];
        CHECK(std::abs(r.value - want) <= 3.0 * r.se + r.escape_bound + 1e-9);
        CHECK(r.upper - r.lower <= 0.01);
    }
}

TEST_CASE("equilibrium exceedance: star closed form") {
    auto p = model_params::make(parse_lambda("point:1"), 1.0, 0.0, 0.0);
    auto est = estimate_alpha(p, {1, 2, 3}, 20000, 55117, 2);
    REQUIRE(est.size() == 3);
    const double want[] = {0.5, 1.0 / 3.0, 0.25};
    for (size_t i = 0; i < 3; ++i) {
        CHECK(std::abs(est[i].value - want[i]) <= 3.0 * est[i].se + 1e-12);
        CHECK(est[i].se < 0.02);
    }
    CHECK(est[0].value > est[1].value);
    CHECK(est[1].value > est[2].value);
}

TEST_CASE("equilibrium exceedance matches solved coefficients") {
    auto p = model_params::make(parse_lambda("kingman"), 1.0, 1.0, 0.5);
    auto cv = solve_auto(p);
    auto est = estimate_alpha(p, {1, 2}, 20000, 90210, 2);
    for (size_t i = 0; i < est.size(); ++i) {
        const double want = cv.a[i + 1];
        CHECK(std::abs(est[i].value - want) <= 3.0 * est[i].se + 1e-9);
    }
}

TEST_CASE("estimators are deterministic across thread counts") {
    auto p = model_params::make(parse_lambda("kingman"), 1.0, 0.5, 0.5);
    auto a1 = estimate_alpha(p, {1}, 2000, 31337, 1);
    auto a4 = estimate_alpha(p, {1}, 2000, 31337, 4);
    CHECK(a1[0].value == a4[0].value);
    CHECK(a1[0].se == a4[0].se);

    auto o1 = estimate_omega(p, {2}, 1000, 31337, 1);
    auto o3 = estimate_omega(p, {2}, 1000, 31337, 3);
    CHECK(o1[0].value == o3[0].value);
    CHECK(o1[0].escapes == o3[0].escapes);

    auto t1 = estimate_t1(p, {4}, 1000, 31337, 1);
    auto t3 = estimate_t1(p, {4}, 1000, 31337, 3);
    CHECK(t1[0].mean == t3[0].mean);
    CHECK(t1[0].se == t3[0].se);
}

TEST_CASE("drift condition separates descent from escape") {
    auto lam = parse_lambda("point:0.5");
    auto slow = model_params::make(lam, 0.0, 0.0, 0.0);
    auto fast = model_params::make(lam, 4.0, 0.0, 0.0);  // above the drift bound

    auto sub = estimate_t1(slow, {64}, 400, 6401, 2, 30.0, 10000L);
    CHECK(sub[0].censored == 0);
    CHECK(sub[0].mean < 5.0);

    auto sup = estimate_t1(fast, {64}, 400, 6402, 2, 30.0, 10000L);
    CHECK(sup[0].censored >= 300);
    CHECK(sup[0].mean > 15.0);

    auto ladder = estimate_t1(slow, {8, 64, 512}, 500, 6403, 2);
    CHECK(ladder[0].log_over_mean < ladder[1].log_over_mean);
    CHECK(ladder[1].log_over_mean < ladder[2].log_over_mean);
}

TEST_CASE("certified escape bound") {
    auto star = model_params::make(parse_lambda("point:1"), 1.0, 0.0, 0.0);
    CHECK(dual_return_bound(star, 128) == Catch::Approx(4.0 / 129.0).epsilon(1e-4));

    auto king = model_params::make(parse_lambda("kingman"), 1.0, 1.0, 0.5);
    CHECK(dual_return_bound(king, 128) < 1e-8);

    auto rows = estimate_omega(king, {2}, 500, 8855, 2);
    CHECK(rows[0].cap == 128);
    CHECK(rows[0].escape_bound < 1e-8);
    CHECK(rows[0].upper - rows[0].lower < 1e-6);
}
