#pragma once

// Closed-form one-step drift and second moment of the unhappy count, their
// asymptotic forms, coarse bounds, and a brute-force enumeration oracle.
//
// With H = M - u happy and u unhappy particles on n vertices, the jumping
// particles land i.i.d. uniformly; writing q1 = 1-1/n, q2 = 1-2/n:
//   drift   = H(1 - q1^u) - u((n-H)/n) q1^{u-1}
//   E[(dU)^2] = A + B + C - D with
//   A = H(1 - q1^u) + u((n-H)/n) q1^{u-1}
//   B = H(H-1)(1 - 2 q1^u + q2^u)
//   C = u(u-1)((n-H)/n)((n-H-1)/n) q2^{u-2}
//   D = 2Hu((n-H)/n) q1^{u-1} (1 - (1-1/(n-1))^{u-1})
// All powers go through exp/expm1 of log1p so the formulas stay accurate up
// to n = 1e9 where direct powering would cancel catastrophically.

#include <displab/errors.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace displab {

struct SecondMomentBreakdown {
    double A = 0.0;
    double B = 0.0;
    double C = 0.0;
    double D = 0.0;
    double total = 0.0;
};

namespace detail {

inline void validate_moment_domain(std::uint64_t n, std::uint64_t M, std::uint64_t u) {
    if (n < 1 || u < 1 || u > M || M > n) {
        throw std::invalid_argument(
            "moment formulas require 1 <= u <= M <= n (got n=" + std::to_string(n) +
            ", M=" + std::to_string(M) + ", u=" + std::to_string(u) + ")");
    }
}

// (1 - k/n)^j evaluated as exp(j*log1p(-k/n)); j = 0 returns exactly 1.
inline double pow_1m(double log_base, std::uint64_t j) {
    return j == 0 ? 1.0 : std::exp(static_cast<double>(j) * log_base);
}

// 1 - (1 - k/n)^j, accurate for tiny k/n; j = 0 returns exactly 0.
inline double one_minus_pow(double log_base, std::uint64_t j) {
    return j == 0 ? 0.0 : -std::expm1(static_cast<double>(j) * log_base);
}

}  // namespace detail

inline double drift_exact(std::uint64_t n, std::uint64_t M, std::uint64_t u) {
    detail::validate_moment_domain(n, M, u);
    const double nd = static_cast<double>(n);
    const double H = static_cast<double>(M - u);
    const double ud = static_cast<double>(u);
    const double lq1 = std::log1p(-1.0 / nd);
    return H * detail::one_minus_pow(lq1, u) -
           ud * ((nd - H) / nd) * detail::pow_1m(lq1, u - 1);
}

inline SecondMomentBreakdown second_moment_exact(std::uint64_t n, std::uint64_t M,
                                                 std::uint64_t u) {
    detail::validate_moment_domain(n, M, u);
    const double nd = static_cast<double>(n);
    const std::uint64_t Hi = M - u;
    const double H = static_cast<double>(Hi);
    const double ud = static_cast<double>(u);
    const double lq1 = std::log1p(-1.0 / nd);

    SecondMomentBreakdown r;
    r.A = H * detail::one_minus_pow(lq1, u) +
          ud * ((nd - H) / nd) * detail::pow_1m(lq1, u - 1);

    if (Hi >= 2) {
        // 1 - 2 q1^u + q2^u = (1 - q1^u) - (q1^u - q2^u); the second piece is
        // exp(u*lq2)*expm1(u*(lq1-lq2)) with lq1-lq2 = log1p(1/(n-2)).
        // H >= 2 forces n >= u + 2 >= 3 so the logs below are finite.
        const double lq2 = std::log1p(-2.0 / nd);
        const double ldiff = std::log1p(1.0 / (nd - 2.0));
        const double bracket =
            detail::one_minus_pow(lq1, u) -
            detail::pow_1m(lq2, u) * std::expm1(static_cast<double>(u) * ldiff);
        r.B = H * (H - 1.0) * bracket;
    }

    if (u >= 2) {
        const double lq2 = std::log1p(-2.0 / nd);
        r.C = ud * (ud - 1.0) * ((nd - H) / nd) * ((nd - H - 1.0) / nd) *
              detail::pow_1m(lq2, u - 2);
    }

    if (Hi >= 1) {
        // H >= 1 with u >= 1 forces n >= 2, so 1/(n-1) is defined.
        const double lr = std::log1p(-1.0 / (nd - 1.0));
        r.D = 2.0 * H * ud * ((nd - H) / nd) * detail::pow_1m(lq1, u - 1) *
              detail::one_minus_pow(lr, u - 1);
    }

    r.total = r.A + r.B + r.C - r.D;
    return r;
}

inline double drift_asymptotic(std::uint64_t n, std::uint64_t M, std::uint64_t u) {
    detail::validate_moment_domain(n, M, u);
    const double nd = static_cast<double>(n);
    const double ud = static_cast<double>(u);
    const double eps = 2.0 * static_cast<double>(M) / nd - 1.0;
    return eps * ud - (ud * ud / nd) * (7.0 / 4.0 + 3.0 * eps / 4.0);
}

inline double variation_asymptotic(std::uint64_t u) {
    if (u < 1) throw std::invalid_argument("variation_asymptotic: u >= 1 required");
    return static_cast<double>(u);
}

// (lower, upper) bracket for E[U_{t+1} | U_t = u]; valid for large n.
inline std::pair<double, double> coarse_bounds(std::uint64_t n, std::uint64_t M,
                                               std::uint64_t u) {
    detail::validate_moment_domain(n, M, u);
    const double nd = static_cast<double>(n);
    const double ud = static_cast<double>(u);
    const double eps = 2.0 * static_cast<double>(M) / nd - 1.0;
    const double lower = (1.0 + eps) * ud - 7.0 * ud * ud / (2.0 * nd);
    const double upper = (1.0 + eps) * ud - ud * ud / nd;
    return {lower, upper};
}

// Exact one-step law by enumerating all n^U equally likely ball placements.
// Happy vertices are labeled 1..H (exchangeability); returns {U' -> prob}.
inline std::map<std::uint64_t, double> enumerate_one_step(std::uint64_t n,
                                                          std::uint64_t U,
                                                          std::uint64_t H) {
    if (n < 1) throw std::invalid_argument("enumerate_one_step: n >= 1 required");
    if (H > n) throw std::invalid_argument("enumerate_one_step: H <= n required");
    if (U == 0) return {{0, 1.0}};

    const std::uint64_t cap = 100'000'000ULL;
    std::uint64_t total = 1;
    for (std::uint64_t i = 0; i < U; ++i) {
        if (total > cap / n) {
            throw ResourceError("enumerate_one_step: n^U exceeds 1e8 placements");
        }
        total *= n;
    }

    std::vector<std::uint32_t> digits(U, 1);   // current placement, values in [1..n]
    std::vector<std::uint32_t> sorted(U);
    std::map<std::uint64_t, std::uint64_t> hist;

    for (std::uint64_t it = 0; it < total; ++it) {
        sorted.assign(digits.begin(), digits.end());
        std::sort(sorted.begin(), sorted.end());
        std::uint64_t X = 0, Y = 0;
        std::size_t i = 0;
        while (i < sorted.size()) {
            std::size_t j = i + 1;
            while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
            if (sorted[i] <= H) {
                ++X;                         // happy vertex hit at least once
            } else if (j - i == 1) {
                ++Y;                         // lone jumper on a free vertex
            }
            i = j;
        }
        ++hist[U + X - Y];

        // odometer increment
        for (std::uint64_t i = 0; i < U; ++i) {
            if (++digits[i] <= n) break;
            digits[i] = 1;
        }
    }

    std::map<std::uint64_t, double> dist;
    for (const auto& [u_next, cnt] : hist) {
        dist[u_next] = static_cast<double>(cnt) / static_cast<double>(total);
    }
    return dist;
}

}  // namespace displab
