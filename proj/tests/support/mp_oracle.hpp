#pragma once

// Scalar reference implementations in 50-digit decimal arithmetic. Written
// loop-by-loop from the definitions, independently of the library kernels.

#include <boost/multiprecision/cpp_dec_float.hpp>

#include <cstddef>
#include <vector>

namespace ttp::oracle {

using mp = boost::multiprecision::cpp_dec_float_50;
using Matrix = std::vector<std::vector<double>>;
using MpMatrix = std::vector<std::vector<mp>>;

inline std::vector<mp> mp_softmax(const std::vector<mp>& row) {
    std::vector<mp> e(row.size());
    mp s = 0;
    for (std::size_t j = 0; j < row.size(); ++j) {
        e[j] = boost::multiprecision::exp(row[j]);
        s += e[j];
    }
    for (auto& v : e) v /= s;
    return e;
}

inline std::vector<mp> lift(const std::vector<double>& row) { return {row.begin(), row.end()}; }

inline mp kl(const std::vector<mp>& p, const std::vector<mp>& q) {
    mp s = 0;
    for (std::size_t j = 0; j < p.size(); ++j) s += p[j] * boost::multiprecision::log(p[j] / q[j]);
    return s;
}

// (1/N) sum_i KL(s(a_i)||s(b_i)) + KL(s(b_i)||s(a_i))
inline mp paired_symmetric_kl(const Matrix& a, const Matrix& b) {
    mp s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto p = mp_softmax(lift(a[i]));
        const auto q = mp_softmax(lift(b[i]));
        s += kl(p, q) + kl(q, p);
    }
    return s / static_cast<int>(a.size());
}

inline MpMatrix row_softmax(const Matrix& s) {
    MpMatrix out;
    for (const auto& row : s) out.push_back(mp_softmax(lift(row)));
    return out;
}

// Both arguments already row-normalized; no batch averaging.
inline mp neighbourhood_loss(const MpMatrix& src, const MpMatrix& tgt) {
    mp s = 0;
    for (std::size_t i = 0; i < src.size(); ++i) s += kl(tgt[i], src[i]) + kl(src[i], tgt[i]);
    return s;
}

inline mp ce_target_loss(const Matrix& f, int t) {
    mp s = 0;
    for (const auto& row : f) s -= boost::multiprecision::log(mp_softmax(lift(row))[static_cast<std::size_t>(t)]);
    return s / static_cast<int>(f.size());
}

inline double relative_error(double got, const mp& want) {
    const mp diff = boost::multiprecision::abs(mp(got) - want);
    const mp scale = boost::multiprecision::abs(want);
    if (scale < mp(1e-300)) return static_cast<double>(diff);
    return static_cast<double>(diff / scale);
}

}  // namespace ttp::oracle
