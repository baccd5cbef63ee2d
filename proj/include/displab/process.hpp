#pragma once

// Exact simulation of the dispersion process on the complete graph with
// loops, reduced by exchangeability to the (U, H) chain: happy vertices are
// relabeled 1..H each step and the U jumpers draw i.i.d. uniform targets.
//
// Counting structure: the per-step statistics (X = distinct happy vertices
// hit, Y = free vertices hit exactly once) are extracted either with an
// open-addressing count map (small U) or with a radix sort + run scan
// (large U). Both consume the same uniform draws in the same order, so the
// sampled law and the stream state do not depend on the path taken; memory
// stays O(U).

#include <displab/errors.hpp>
#include <displab/moments.hpp>
#include <displab/rng.hpp>
#include <displab/stats.hpp>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace displab {

struct ProcessParams {
    std::uint64_t n = 0;
    std::uint64_t M = 0;

    ProcessParams(std::uint64_t n_, std::uint64_t M_) : n(n_), M(M_) {
        if (n < 1) throw std::invalid_argument("ProcessParams: n must be >= 1");
        if (M < 2 || M > n) {
            throw std::invalid_argument("M must satisfy 2 <= M <= n");
        }
    }

    double alpha() const {
        const double nd = static_cast<double>(n);
        return (static_cast<double>(M) - nd / 2.0) / std::sqrt(nd);
    }
    double epsilon() const {
        return 2.0 * static_cast<double>(M) / static_cast<double>(n) - 1.0;
    }
};

struct ProcessState {
    std::uint64_t t = 0;
    std::uint64_t U = 0;
    std::uint64_t H = 0;
};

struct StepOutcome {
    ProcessState state;
    std::uint64_t X = 0;   // happy -> unhappy
    std::uint64_t Y = 0;   // unhappy -> happy
};

struct CheckpointStats {
    double delta = 0.0;
    std::uint64_t time = 0;          // first t >= 1 with U_t <= floor(sqrt(n)/delta)
    std::uint64_t u_at_time = 0;
    std::uint64_t jumps_before = 0;  // sum of U_t over t = 0..time (inclusive)
};

struct RunSummary {
    std::uint64_t dispersion_time = 0;
    std::uint64_t total_jumps = 0;   // sum of U_t over t = 0..T-1
    std::uint64_t monitor_violations = 0;
    std::vector<CheckpointStats> checkpoints;
    std::vector<std::pair<std::uint64_t, std::uint64_t>> trajectory;  // (t, U_t)
    bool capped = false;
};

struct RunOptions {
    std::vector<double> deltas;
    bool record_trajectory = false;
    std::uint64_t thin = 1;
    std::uint64_t step_cap = 1'000'000'000ULL;
    bool monitor = true;
};

class CappedRunError : public std::runtime_error {
  public:
    explicit CappedRunError(RunSummary partial_)
        : std::runtime_error("run exceeded step cap at t = " +
                             std::to_string(partial_.dispersion_time)),
          partial(std::move(partial_)) {}
    RunSummary partial;
};

class Simulator {
  public:
    static constexpr std::size_t kDefaultSortThreshold = 32768;

    explicit Simulator(std::size_t sort_threshold = kDefaultSortThreshold)
        : sort_threshold_(sort_threshold) {}

    // One-step statistics of the exchangeable law: draws U uniforms on
    // [1..n], returns (X, Y).
    std::pair<std::uint64_t, std::uint64_t> sample_xy(std::uint64_t n, std::uint64_t U,
                                                      std::uint64_t H,
                                                      RandomStream& rng) {
        if (n < 1) throw std::invalid_argument("sample_xy: n >= 1 required");
        if (H > n) throw std::invalid_argument("sample_xy: H <= n required");
        if (U < 1) throw AlreadyDispersedError("sample_xy: no unhappy particles");
        if (U >= sort_threshold_ && n <= std::numeric_limits<std::uint32_t>::max()) {
            return sample_sorted(n, U, H, rng);
        }
        return sample_mapped(n, U, H, rng);
    }

    StepOutcome step(const ProcessParams& params, const ProcessState& state,
                     RandomStream& rng) {
        if (state.U == 0) {
            throw AlreadyDispersedError("step: process already dispersed");
        }
        if (state.U + state.H != params.M) {
            throw std::invalid_argument("step: state does not conserve U + H = M");
        }
        auto [x, y] = sample_xy(params.n, state.U, state.H, rng);
        const std::uint64_t u_next = state.U + x - y;
        return StepOutcome{ProcessState{state.t + 1, u_next, params.M - u_next}, x, y};
    }

  private:
    std::pair<std::uint64_t, std::uint64_t> sample_mapped(std::uint64_t n,
                                                          std::uint64_t U,
                                                          std::uint64_t H,
                                                          RandomStream& rng) {
        ensure_table(U);
        const std::uint64_t mask = table_mask_;
        std::uint64_t X = 0, Y = 0;
        for (std::uint64_t i = 0; i < U; ++i) {
            const std::uint64_t v = rng.uniform_int(n);
            std::uint64_t idx = (v * 0x9E3779B97F4A7C15ULL) >> table_shift_;
            for (;;) {
                const std::uint64_t slot = slots_[idx];
                if (slot == 0) {
                    slots_[idx] = v << 1;          // first hit, single so far
                    dirty_.push_back(static_cast<std::uint32_t>(idx));
                    if (v <= H) ++X; else ++Y;
                    break;
                }
                if ((slot >> 1) == v) {
                    if (!(slot & 1)) {
                        slots_[idx] = slot | 1;    // second hit: no longer single
                        if (v > H) --Y;
                    }
                    break;
                }
                idx = (idx + 1) & mask;
            }
        }
        for (std::uint32_t idx : dirty_) slots_[idx] = 0;
        dirty_.clear();
        return {X, Y};
    }

    std::pair<std::uint64_t, std::uint64_t> sample_sorted(std::uint64_t n,
                                                          std::uint64_t U,
                                                          std::uint64_t H,
                                                          RandomStream& rng) {
        hits_.resize(U);
        hits_tmp_.resize(U);
        for (std::uint64_t i = 0; i < U; ++i) {
            hits_[i] = static_cast<std::uint32_t>(rng.uniform_int(n));
        }
        const std::uint32_t* sorted = radix_sort(n);
        std::uint64_t X = 0, Y = 0;
        std::size_t i = 0;
        const std::size_t len = hits_.size();
        while (i < len) {
            const std::uint32_t v = sorted[i];
            std::size_t j = i + 1;
            while (j < len && sorted[j] == v) ++j;
            if (v <= H) {
                ++X;
            } else if (j - i == 1) {
                ++Y;
            }
            i = j;
        }
        return {X, Y};
    }

    // LSD radix sort (11/11/10 bits); passes whose key range is constant are
    // skipped, so the sorted data may live in either buffer.
    const std::uint32_t* radix_sort(std::uint64_t n) {
        constexpr std::uint32_t kBits = 11;
        constexpr std::uint32_t kBuckets = 1u << kBits;
        const std::size_t len = hits_.size();
        std::uint32_t* src = hits_.data();
        std::uint32_t* dst = hits_tmp_.data();
        for (std::uint32_t shift = 0; shift < 32; shift += kBits) {
            if ((n - 1) >> shift == 0) break;  // remaining bits are all zero
            std::uint32_t count[kBuckets] = {};
            const std::uint32_t mask = kBuckets - 1;
            for (std::size_t i = 0; i < len; ++i) ++count[(src[i] >> shift) & mask];
            std::uint32_t pos = 0;
            for (std::uint32_t b = 0; b < kBuckets; ++b) {
                const std::uint32_t c = count[b];
                count[b] = pos;
                pos += c;
            }
            for (std::size_t i = 0; i < len; ++i) {
                dst[count[(src[i] >> shift) & mask]++] = src[i];
            }
            std::swap(src, dst);
        }
        return src;
    }

    void ensure_table(std::uint64_t U) {
        std::size_t want = 16;
        unsigned shift = 60;
        while (want < 4 * U && want < (std::size_t{1} << 31)) {
            want <<= 1;
            --shift;
        }
        if (slots_.size() < want) {
            slots_.assign(want, 0);
            table_mask_ = want - 1;
            table_shift_ = shift;
        }
    }

    std::size_t sort_threshold_;
    std::vector<std::uint64_t> slots_;      // (vertex << 1) | saturated
    std::vector<std::uint32_t> dirty_;
    std::uint64_t table_mask_ = 0;
    unsigned table_shift_ = 64;
    std::vector<std::uint32_t> hits_, hits_tmp_;
};

inline StepOutcome step(const ProcessParams& params, const ProcessState& state,
                        RandomStream& rng) {
    Simulator sim;
    return sim.step(params, state, rng);
}

inline RunSummary run(const ProcessParams& params, RandomStream& rng,
                      const RunOptions& opts) {
    if (opts.step_cap < 1) throw std::invalid_argument("run: step_cap >= 1 required");
    if (opts.thin < 1) throw std::invalid_argument("run: thin >= 1 required");

    struct PendingCheckpoint {
        double delta;
        std::uint64_t threshold;
        bool hit = false;
    };
    std::vector<PendingCheckpoint> pending;
    const double sqrt_n = std::sqrt(static_cast<double>(params.n));
    for (double d : opts.deltas) {
        if (!(d > 0.0)) throw std::invalid_argument("run: delta must be positive");
        pending.push_back({d, static_cast<std::uint64_t>(std::floor(sqrt_n / d)), false});
    }

    const double ln_n = std::log(static_cast<double>(params.n));
    RunSummary summary;
    Simulator sim;
    ProcessState state{0, params.M, 0};
    std::uint64_t jumps = 0;

    if (opts.record_trajectory) summary.trajectory.emplace_back(0, params.M);

    while (state.U > 0) {
        if (state.t >= opts.step_cap) {
            summary.dispersion_time = state.t;
            summary.total_jumps = jumps;
            summary.capped = true;
            throw CappedRunError(summary);
        }
        const std::uint64_t u_prev = state.U;
        double expected_next = 0.0, band = 0.0;
        if (opts.monitor) {
            expected_next = static_cast<double>(u_prev) +
                            drift_exact(params.n, params.M, u_prev);
            band = 4.0 * std::sqrt(static_cast<double>(u_prev) * ln_n);
        }

        state = sim.step(params, state, rng).state;
        jumps += u_prev;

        if (opts.monitor &&
            std::abs(static_cast<double>(state.U) - expected_next) > band) {
            ++summary.monitor_violations;
        }
        for (auto& cp : pending) {
            if (!cp.hit && state.U <= cp.threshold) {
                cp.hit = true;
                summary.checkpoints.push_back(
                    CheckpointStats{cp.delta, state.t, state.U, jumps + state.U});
            }
        }
        if (opts.record_trajectory && (state.t % opts.thin == 0 || state.U == 0)) {
            summary.trajectory.emplace_back(state.t, state.U);
        }
    }

    summary.dispersion_time = state.t;
    summary.total_jumps = jumps;
    return summary;
}

struct BatchSummary {
    std::vector<RunSummary> runs;
    double mean_dispersion_time = 0.0;
    double se_dispersion_time = 0.0;
    double mean_total_jumps = 0.0;
    double se_total_jumps = 0.0;
    std::uint64_t capped_runs = 0;
};

// Generic deterministic replica fan-out: replica i computes fn(i, stream_i)
// with stream_i = derive_stream(master_seed, i); results are indexed by
// replica, so the output does not depend on the thread count.
template <typename T, typename Fn>
std::vector<T> parallel_replicas(std::uint64_t runs, std::uint64_t master_seed,
                                 unsigned threads, Fn&& fn) {
    if (runs == 0) throw std::invalid_argument("parallel_replicas: runs >= 1 required");
    if (threads == 0) {
        threads = std::max(1u, std::thread::hardware_concurrency());
    }
    threads = static_cast<unsigned>(
        std::min<std::uint64_t>(threads, runs));

    std::vector<T> results(runs);
    std::atomic<std::uint64_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;

    auto worker = [&]() {
        for (;;) {
            const std::uint64_t i = next.fetch_add(1);
            if (i >= runs) return;
            try {
                RandomStream rng = derive_stream(master_seed, i);
                results[i] = fn(i, rng);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
                return;
            }
        }
    };

    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(threads);
        for (unsigned w = 0; w < threads; ++w) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (error) std::rethrow_exception(error);
    return results;
}

inline BatchSummary run_batch(const ProcessParams& params, std::uint64_t runs,
                              std::uint64_t master_seed, const RunOptions& opts,
                              unsigned threads = 0) {
    BatchSummary batch;
    batch.runs = parallel_replicas<RunSummary>(
        runs, master_seed, threads, [&](std::uint64_t, RandomStream& rng) {
            try {
                return run(params, rng, opts);
            } catch (const CappedRunError& e) {
                return e.partial;  // capped flag set; not a batch failure
            }
        });

    NeumaierSum sum_t, sum_j;
    for (const auto& r : batch.runs) {
        sum_t.add(static_cast<double>(r.dispersion_time));
        sum_j.add(static_cast<double>(r.total_jumps));
        if (r.capped) ++batch.capped_runs;
    }
    const double nr = static_cast<double>(batch.runs.size());
    batch.mean_dispersion_time = sum_t.value() / nr;
    batch.mean_total_jumps = sum_j.value() / nr;
    if (batch.runs.size() >= 2) {
        NeumaierSum var_t, var_j;
        for (const auto& r : batch.runs) {
            const double dt = static_cast<double>(r.dispersion_time) -
                              batch.mean_dispersion_time;
            const double dj = static_cast<double>(r.total_jumps) -
                              batch.mean_total_jumps;
            var_t.add(dt * dt);
            var_j.add(dj * dj);
        }
        batch.se_dispersion_time = std::sqrt(var_t.value() / (nr - 1.0) / nr);
        batch.se_total_jumps = std::sqrt(var_j.value() / (nr - 1.0) / nr);
    }
    return batch;
}

}  // namespace displab
