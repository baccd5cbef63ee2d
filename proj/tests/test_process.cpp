#include <catch2/catch_amalgamated.hpp>

#include <displab/moments.hpp>
#include <displab/process.hpp>
#include <displab/stats.hpp>

#include <cmath>
#include <cstdint>
#include <map>
#include <vector>

using displab::AlreadyDispersedError;
using displab::CappedRunError;
using displab::ProcessParams;
using displab::ProcessState;
using displab::RandomStream;
using displab::RunOptions;
using displab::RunSummary;
using displab::Simulator;
using displab::derive_stream;

namespace {

// Chi-square p-value of an empirical one-step histogram against the
// enumeration oracle.
double law_pvalue(std::uint64_t n, std::uint64_t U, std::uint64_t H,
                  std::uint64_t samples, std::uint64_t seed,
                  std::size_t sort_threshold) {
    auto expected = displab::enumerate_one_step(n, U, H);
    std::map<std::uint64_t, std::uint64_t> hist;
    RandomStream rng = derive_stream(seed, 0);
    Simulator sim(sort_threshold);
    for (std::uint64_t i = 0; i < samples; ++i) {
        auto [x, y] = sim.sample_xy(n, U, H, rng);
        ++hist[U + x - y];
    }
    double stat = 0.0;
    for (const auto& [u_next, p] : expected) {
        const double exp_count = p * static_cast<double>(samples);
        const double obs = hist.count(u_next) ? static_cast<double>(hist.at(u_next)) : 0.0;
        stat += (obs - exp_count) * (obs - exp_count) / exp_count;
        hist.erase(u_next);
    }
    REQUIRE(hist.empty());  // no outcomes outside the exact support
    const double dof = static_cast<double>(expected.size()) - 1.0;
    if (dof <= 0.0) return 1.0;
    return displab::chi_square_pvalue(stat, dof);
}

}  // namespace

TEST_CASE("step outcome frozen distributions", "[process]") {
    // n=2, M=2, (U=2,H=0): P(U'=2) = P(U'=0) = 1/2.
    RandomStream rng = derive_stream(101, 0);
    Simulator sim;
    std::uint64_t stay = 0;
    const std::uint64_t samples = 1'000'000;
    for (std::uint64_t i = 0; i < samples; ++i) {
        auto [x, y] = sim.sample_xy(2, 2, 0, rng);
        if (2 + x - y == 2) ++stay;
    }
    REQUIRE(std::abs(static_cast<double>(stay) / samples - 0.5) <= 0.002);

    // n=3, (U=1,H=1): P(U'=2) = 1/3.
    std::uint64_t bump = 0;
    for (std::uint64_t i = 0; i < samples; ++i) {
        auto [x, y] = sim.sample_xy(3, 1, 1, rng);
        if (1 + x - y == 2) ++bump;
    }
    REQUIRE(std::abs(static_cast<double>(bump) / samples - 1.0 / 3.0) <= 0.002);

    // (U=1,H=0): a lone particle is happy wherever it lands.
    for (std::uint64_t i = 0; i < 1000; ++i) {
        auto [x, y] = sim.sample_xy(57, 1, 0, rng);
        REQUIRE(x == 0);
        REQUIRE(y == 1);
    }
}

TEST_CASE("one-step law matches enumeration (chi-square)", "[process][law]") {
    std::uint64_t seed = 2024;
    for (std::uint64_t n = 2; n <= 4; ++n) {
        for (std::uint64_t U = 1; U <= 4; ++U) {
            for (std::uint64_t H = 0; H <= 2 && H <= n - 1; ++H) {
                if (U + H > n) continue;
                const double p = law_pvalue(n, U, H, 200'000, ++seed, 32);
                INFO("n=" << n << " U=" << U << " H=" << H);
                REQUIRE(p > 1e-6);
            }
        }
    }
}

TEST_CASE("map and sort counting paths produce identical outcomes", "[process]") {
    // Same stream, same draws; only the counting structure differs.
    for (auto [n, U, H] : std::vector<std::array<std::uint64_t, 3>>{
             {50, 40, 9}, {1000, 700, 300}, {17, 17, 0}, {97, 5, 80}}) {
        RandomStream a = derive_stream(7, 1);
        RandomStream b = derive_stream(7, 1);
        Simulator map_sim(std::numeric_limits<std::size_t>::max());
        Simulator sort_sim(0);
        for (int i = 0; i < 500; ++i) {
            auto [xa, ya] = map_sim.sample_xy(n, U, H, a);
            auto [xb, yb] = sort_sim.sample_xy(n, U, H, b);
            REQUIRE(xa == xb);
            REQUIRE(ya == yb);
        }
    }
}

TEST_CASE("step preserves invariants and errors on dispersed state", "[process]") {
    ProcessParams params(100, 50);
    RandomStream rng = derive_stream(5, 0);
    ProcessState st{0, 50, 0};
    Simulator sim;
    for (int i = 0; i < 200 && st.U > 0; ++i) {
        auto out = sim.step(params, st, rng);
        REQUIRE(out.X <= st.H);
        REQUIRE(out.Y <= st.U);
        REQUIRE(out.state.U == st.U + out.X - out.Y);
        REQUIRE(out.state.U + out.state.H == params.M);
        REQUIRE(out.state.t == st.t + 1);
        st = out.state;
    }
    ProcessState done{3, 0, 50};
    REQUIRE_THROWS_AS(sim.step(params, done, rng), AlreadyDispersedError);
}

TEST_CASE("sample mean drift and second moment match closed forms", "[process][law]") {
    const std::uint64_t n = 10'000;
    const std::uint64_t M = n / 2;
    RandomStream rng = derive_stream(99, 0);
    Simulator sim;
    for (std::uint64_t u : {50ULL, 100ULL, 316ULL}) {
        const std::uint64_t H = M - u;
        const std::uint64_t steps = 100'000;
        double sum_d = 0.0, sum_d2 = 0.0, sum_d4 = 0.0;
        for (std::uint64_t i = 0; i < steps; ++i) {
            auto [x, y] = sim.sample_xy(n, u, H, rng);
            const double d = static_cast<double>(x) - static_cast<double>(y);
            sum_d += d;
            sum_d2 += d * d;
            sum_d4 += d * d * d * d;
        }
        const double mean_d = sum_d / steps;
        const double mean_d2 = sum_d2 / steps;
        const double var_d = mean_d2 - mean_d * mean_d;
        const double se_mean = std::sqrt(var_d / steps);
        const double drift = displab::drift_exact(n, M, u);
        INFO("u=" << u);
        REQUIRE(std::abs(mean_d - drift) <= 4.0 * se_mean);

        const double var_d2 = sum_d4 / steps - mean_d2 * mean_d2;
        const double se_d2 = std::sqrt(var_d2 / steps);
        const double total = displab::second_moment_exact(n, M, u).total;
        REQUIRE(std::abs(mean_d2 - total) <= 4.0 * se_d2);
    }
}

TEST_CASE("run on n=2 M=2 jumps both particles every step", "[process]") {
    ProcessParams params(2, 2);
    RandomStream rng = derive_stream(12, 0);
    RunSummary s = displab::run(params, rng, RunOptions{});
    REQUIRE(s.dispersion_time >= 1);
    REQUIRE(s.total_jumps == 2 * s.dispersion_time);
    REQUIRE(s.monitor_violations == 0);
}

TEST_CASE("run trajectory starts at M and ends at zero", "[process]") {
    ProcessParams params(10'000, 5'000);
    RandomStream rng = derive_stream(4, 2);
    RunOptions opts;
    opts.record_trajectory = true;
    opts.thin = 1;
    RunSummary s = displab::run(params, rng, opts);
    REQUIRE(!s.trajectory.empty());
    REQUIRE(s.trajectory.front().first == 0);
    REQUIRE(s.trajectory.front().second == 5'000);
    REQUIRE(s.trajectory.back().first == s.dispersion_time);
    REQUIRE(s.trajectory.back().second == 0);
    // total_jumps equals the sum of U_t over the full trajectory
    std::uint64_t total = 0;
    for (auto [t, u] : s.trajectory) total += u;
    REQUIRE(total == s.total_jumps);
}

TEST_CASE("trajectory thinning keeps first and last points", "[process]") {
    ProcessParams params(10'000, 5'000);
    RandomStream rng = derive_stream(4, 3);
    RunOptions opts;
    opts.record_trajectory = true;
    opts.thin = 7;
    RunSummary s = displab::run(params, rng, opts);
    REQUIRE(s.trajectory.front().first == 0);
    REQUIRE(s.trajectory.back().first == s.dispersion_time);
    for (std::size_t i = 1; i + 1 < s.trajectory.size(); ++i) {
        REQUIRE(s.trajectory[i].first % 7 == 0);
    }
}

TEST_CASE("checkpoints honor threshold definition", "[process]") {
    ProcessParams params(10'000, 5'000);
    RandomStream rng = derive_stream(21, 0);
    RunOptions opts;
    opts.deltas = {0.5, 0.1};
    opts.record_trajectory = true;
    opts.thin = 1;
    RunSummary s = displab::run(params, rng, opts);
    REQUIRE(s.checkpoints.size() == 2);
    for (const auto& cp : s.checkpoints) {
        const auto thresh = static_cast<std::uint64_t>(
            std::floor(std::sqrt(static_cast<double>(params.n)) / cp.delta));
        REQUIRE(cp.time >= 1);
        REQUIRE(cp.u_at_time <= thresh);
        // previous step was above threshold
        REQUIRE(s.trajectory.at(cp.time - 1).second > thresh);
        // inclusive jump count up to the checkpoint step
        std::uint64_t sum = 0;
        for (std::uint64_t t = 0; t <= cp.time; ++t) sum += s.trajectory.at(t).second;
        REQUIRE(sum == cp.jumps_before);
    }
}

TEST_CASE("step cap raises a capped-run error with partial summary", "[process]") {
    ProcessParams params(10'000, 10'000);  // M = n: dispersal takes astronomically long
    RandomStream rng = derive_stream(1, 0);
    RunOptions opts;
    opts.step_cap = 10;
    bool caught = false;
    try {
        displab::run(params, rng, opts);
    } catch (const CappedRunError& e) {
        caught = true;
        REQUIRE(e.partial.capped);
        REQUIRE(e.partial.dispersion_time == 10);
        // At M = n the chain settles near its quasi-stationary level
        // (~0.58 n), so ten steps contribute well over 50k jumps.
        REQUIRE(e.partial.total_jumps >= 50'000ULL);
    }
    REQUIRE(caught);
}

TEST_CASE("params validation", "[process]") {
    REQUIRE_THROWS_AS(ProcessParams(100, 200), std::invalid_argument);  // M > n
    REQUIRE_THROWS_AS(ProcessParams(100, 1), std::invalid_argument);    // M < 2
    REQUIRE_THROWS_AS(ProcessParams(0, 0), std::invalid_argument);
    ProcessParams p(1'000'000, 500'000 + 3'000);
    REQUIRE(p.alpha() == Catch::Approx(3.0).margin(1e-12));
    REQUIRE(p.epsilon() == Catch::Approx(0.006).margin(1e-15));
}

TEST_CASE("batch determinism across thread counts", "[process]") {
    ProcessParams params(10'000, 5'000);
    RunOptions opts;
    opts.deltas = {0.2};
    auto b1 = displab::run_batch(params, 16, 77, opts, 1);
    auto b4 = displab::run_batch(params, 16, 77, opts, 4);
    REQUIRE(b1.runs.size() == b4.runs.size());
    for (std::size_t i = 0; i < b1.runs.size(); ++i) {
        REQUIRE(b1.runs[i].dispersion_time == b4.runs[i].dispersion_time);
        REQUIRE(b1.runs[i].total_jumps == b4.runs[i].total_jumps);
        REQUIRE(b1.runs[i].monitor_violations == b4.runs[i].monitor_violations);
        REQUIRE(b1.runs[i].checkpoints.size() == b4.runs[i].checkpoints.size());
        for (std::size_t k = 0; k < b1.runs[i].checkpoints.size(); ++k) {
            REQUIRE(b1.runs[i].checkpoints[k].time == b4.runs[i].checkpoints[k].time);
            REQUIRE(b1.runs[i].checkpoints[k].u_at_time ==
                    b4.runs[i].checkpoints[k].u_at_time);
        }
    }
    REQUIRE(b1.mean_dispersion_time == b4.mean_dispersion_time);
    REQUIRE(b1.mean_total_jumps == b4.mean_total_jumps);
}

TEST_CASE("every batch run disperses at criticality", "[process]") {
    ProcessParams params(10'000, 5'000);
    auto b = displab::run_batch(params, 1000, 13, RunOptions{}, 0);
    REQUIRE(b.capped_runs == 0);
    for (const auto& r : b.runs) {
        REQUIRE(r.dispersion_time >= 1);
    }
}

TEST_CASE("total jumps centered statistic is stable across seeds", "[process]") {
    ProcessParams params(10'000, 5'000);
    const double centering = 2.0 / 7.0 * std::log(10'000.0);
    auto stat = [&](std::uint64_t seed) {
        auto b = displab::run_batch(params, 1000, seed, RunOptions{}, 0);
        double m = 0.0;
        for (const auto& r : b.runs) m += static_cast<double>(r.total_jumps);
        m /= static_cast<double>(b.runs.size());
        return m / static_cast<double>(params.n) - centering;
    };
    const double s1 = stat(1);
    const double s2 = stat(2);
    REQUIRE(std::isfinite(s1));
    REQUIRE(std::abs(s1 - s2) <= 0.15);
}

TEST_CASE("concentration monitor is quiet on full runs", "[process][slow]") {
    ProcessParams params(1'000'000, 500'000);
    int violating_runs = 0;
    const int runs = 100;
    auto b = displab::run_batch(params, runs, 31, RunOptions{}, 0);
    for (const auto& r : b.runs) {
        if (r.monitor_violations > 0) ++violating_runs;
    }
    REQUIRE(violating_runs <= 1);  // >= 99% of runs clean
}
