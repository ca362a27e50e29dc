#include "criteria.hpp"

#include "fixtures.hpp"
#include "mp_oracle.hpp"

#include "ttp/gradcheck.hpp"
#include "ttp/losses.hpp"
#include "ttp/projection.hpp"
#include "ttp/rng.hpp"
#include "ttp/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <memory>
#include <numeric>

namespace ttp::acceptance {

namespace {

using clock = std::chrono::steady_clock;

double seconds_since(clock::time_point start) {
    return std::chrono::duration<double>(clock::now() - start).count();
}

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, pattern, a, b, c);
    return buf;
}

Tensor<double> random_features(Rng& rng, std::size_t rows, std::size_t cols, double spread) {
    Tensor<double> t({rows, cols});
    for (auto& v : t.values()) v = uniform(rng, -spread, spread);
    return t;
}

oracle::Matrix to_matrix(const Tensor<double>& t) {
    oracle::Matrix m(t.dim(0), std::vector<double>(t.dim(1)));
    for (std::size_t i = 0; i < t.dim(0); ++i) {
        for (std::size_t j = 0; j < t.dim(1); ++j) m[i][j] = t.at(i, j);
    }
    return m;
}

Tensor<double> permute_rows(const Tensor<double>& t, const std::vector<std::size_t>& perm) {
    Tensor<double> out(t.shape());
    const std::size_t k = t.dim(1);
    for (std::size_t i = 0; i < perm.size(); ++i) {
        for (std::size_t j = 0; j < k; ++j) out.at(i, j) = t.at(perm[i], j);
    }
    return out;
}

// Rows and columns permuted together.
Tensor<double> permute_square(const Tensor<double>& t, const std::vector<std::size_t>& perm) {
    Tensor<double> out(t.shape());
    for (std::size_t i = 0; i < perm.size(); ++i) {
        for (std::size_t j = 0; j < perm.size(); ++j) out.at(i, j) = t.at(perm[i], perm[j]);
    }
    return out;
}

std::vector<std::size_t> random_permutation(Rng& rng, std::size_t n) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), 0);
    for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[uniform_index(rng, i)]);
    return p;
}

double total_variation(const Tensor<double>& a, const Tensor<double>& b) {
    const auto sa = row_softmax(SimilarityMatrix<double>{a, false}).values;
    const auto sb = row_softmax(SimilarityMatrix<double>{b, false}).values;
    double worst = 0.0;
    for (std::size_t i = 0; i < a.dim(0); ++i) {
        double tv = 0.0;
        for (std::size_t j = 0; j < a.dim(1); ++j) tv += std::abs(sa.at(i, j) - sb.at(i, j));
        worst = std::max(worst, tv / 2);
    }
    return worst;
}

}  // namespace

CriterionResult projection_budget() {
    CriterionResult r{1, false, {}, {}, false};
    const auto start = clock::now();
    const double eps255[] = {0, 8, 16, 32};
    const double slack = std::ldexp(1.0, -20);
    Rng rng(derive_seed(1, "acceptance-projection"));
    double worst_excess = -1.0;
    std::size_t range_violations = 0, exact_failures = 0;
    for (std::size_t trial = 0; trial < 10000; ++trial) {
        const Budget budget = Budget::from_255(eps255[trial % 4]);
        const std::size_t n = 1 + uniform_index(rng, 2);
        const std::size_t h = 3 + uniform_index(rng, 14), w = 3 + uniform_index(rng, 14);
        Tensor<float> raw({n, 3, h, w}), anchor({n, 3, h, w});
        for (auto& v : raw.values()) v = static_cast<float>(uniform(rng, -0.5, 1.5));
        for (auto& v : anchor.values()) v = static_cast<float>(uniform(rng, 0.0, 1.0));
        const Tensor<float> out = project(raw, anchor, budget);
        worst_excess = std::max(worst_excess, linf_distance(out, anchor) - budget.epsilon);
        for (float v : out.values()) range_violations += !(v >= 0.0f && v <= 1.0f);
        if (budget.epsilon == 0.0 && !(out == anchor)) ++exact_failures;
    }
    const double elapsed = seconds_since(start);
    r.pass = worst_excess <= slack && range_violations == 0 && exact_failures == 0 && elapsed < 60.0;
    r.summary = "projection budget: 10000 triples, max(|out-anchor| - eps) = " + fmt("%.3g", worst_excess) +
                " (limit 2^-20), " + std::to_string(range_violations) + " out-of-range pixels, " +
                std::to_string(exact_failures) + " inexact eps=0 cases, " + fmt("%.1f s", elapsed);
    return r;
}

CriterionResult loss_oracles() {
    CriterionResult r{2, true, {}, {}, false};
    const auto start = clock::now();
    Rng rng(derive_seed(2, "acceptance-losses"));
    auto fail = [&](const std::string& what) {
        r.pass = false;
        r.details.push_back(what);
    };

    // oracle agreement
    double worst = 0.0;
    std::size_t instances = 0;
    for (std::size_t trial = 0; trial < 64; ++trial, ++instances) {
        const std::size_t rows = 1 + trial % 4, cols = 2 + (trial / 4) % 4;
        const auto a = random_features(rng, rows, cols, 3.0);
        const auto b = random_features(rng, rows, cols, 3.0);
        const auto ma = to_matrix(a), mb = to_matrix(b);
        worst = std::max(worst, oracle::relative_error(paired_symmetric_kl(a, b), oracle::paired_symmetric_kl(ma, mb)));
        const auto sa = row_softmax(SimilarityMatrix<double>{a, false}).values;
        const auto ref = oracle::row_softmax(ma);
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < cols; ++j) worst = std::max(worst, oracle::relative_error(sa.at(i, j), ref[i][j]));
        }
        const auto sq_a = random_features(rng, rows, rows, 1.0), sq_b = random_features(rng, rows, rows, 1.0);
        const double nb = neighbourhood_loss(row_softmax(SimilarityMatrix<double>{sq_a, false}),
                                             row_softmax(SimilarityMatrix<double>{sq_b, false}));
        worst = std::max(worst, oracle::relative_error(nb, oracle::neighbourhood_loss(oracle::row_softmax(to_matrix(sq_a)),
                                                                                     oracle::row_softmax(to_matrix(sq_b)))));
        const int t = static_cast<int>(uniform_index(rng, cols));
        worst = std::max(worst, oracle::relative_error(ce_target_loss(a, t), oracle::ce_target_loss(ma, t)));
    }
    if (worst > 1e-9) fail("oracle relative error " + fmt("%.3g", worst) + " > 1e-9");

    // properties over 10,000 random feature pairs
    std::size_t negatives = 0, asymmetric = 0, indiscernible = 0, perm_failures = 0, scale_failures = 0,
                shift_failures = 0;
    for (std::size_t trial = 0; trial < 10000; ++trial) {
        const std::size_t rows = 2 + uniform_index(rng, 3), cols = 2 + uniform_index(rng, 4);
        const auto adv = random_features(rng, rows, cols, 4.0);
        const auto aug = random_features(rng, rows, cols, 4.0);
        const auto tgt = random_features(rng, rows, cols, 4.0);
        const auto parts = generator_objective(adv, aug, tgt, 0, LossSwitches{}).parts;
        negatives += parts.l_dist < 0 || parts.l_aug < 0 || parts.l_sim < 0;

        const double ab = paired_symmetric_kl(adv, tgt);
        asymmetric += ab != paired_symmetric_kl(tgt, adv);
        indiscernible += paired_symmetric_kl(adv, adv) != 0.0 || (total_variation(adv, tgt) >= 1e-3 && !(ab > 0.0));

        const auto perm = random_permutation(rng, rows);
        perm_failures += std::abs(paired_symmetric_kl(permute_rows(adv, perm), permute_rows(tgt, perm)) - ab) > 1e-12 * (1 + ab);
        const auto s_src = similarity_matrix(adv, aug).values, s_tgt = similarity_matrix(tgt, tgt).values;
        const double nb = neighbourhood_loss_grad(s_src, s_tgt).value;
        const double nb_perm = neighbourhood_loss_grad(permute_square(s_src, perm), permute_square(s_tgt, perm)).value;
        perm_failures += std::abs(nb - nb_perm) > 1e-12 * (1 + nb);

        Tensor<double> scaled = adv;
        const std::size_t row = uniform_index(rng, rows);
        const double lambda = uniform(rng, 0.1, 10.0);
        for (std::size_t j = 0; j < cols; ++j) scaled.at(row, j) *= lambda;
        const auto s_scaled = similarity_matrix(scaled, aug).values;
        for (std::size_t i = 0; i < s_src.size(); ++i) scale_failures += std::abs(s_scaled[i] - s_src[i]) > 1e-12;

        Tensor<double> shifted = adv;
        const double c = uniform(rng, -50.0, 50.0);
        for (std::size_t j = 0; j < cols; ++j) shifted.at(row, j) += c;
        const auto sm = row_softmax(SimilarityMatrix<double>{adv, false}).values;
        const auto sm_shift = row_softmax(SimilarityMatrix<double>{shifted, false}).values;
        for (std::size_t i = 0; i < sm.size(); ++i) shift_failures += std::abs(sm[i] - sm_shift[i]) > 1e-12;
        const double ce = ce_target_loss(adv, 0);
        shift_failures += std::abs(ce_target_loss(shifted, 0) - ce) > 1e-12 * (1 + ce);
    }
    if (negatives) fail(std::to_string(negatives) + " negative loss components");
    if (asymmetric) fail(std::to_string(asymmetric) + " asymmetric KL values");
    if (indiscernible) fail(std::to_string(indiscernible) + " identity-of-indiscernibles failures");
    if (perm_failures) fail(std::to_string(perm_failures) + " permutation failures");
    if (scale_failures) fail(std::to_string(scale_failures) + " cosine scale failures");
    if (shift_failures) fail(std::to_string(shift_failures) + " softmax shift failures");

    // distribution loss decreases along the ramp a -> b
    for (std::size_t trial = 0; trial < 100; ++trial) {
        const auto a = random_features(rng, 3, 5, 3.0), b = random_features(rng, 3, 5, 3.0);
        double prev = paired_symmetric_kl(a, b);
        for (int k = 1; k <= 20; ++k) {
            const double lambda = k / 20.0;
            Tensor<double> mix(a.shape());
            for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = lambda * b[i] + (1 - lambda) * a[i];
            const double now = distribution_loss(mix, b);
            if (!(now < prev || (k == 20 && now == 0.0))) {
                fail("ramp not monotone at trial " + std::to_string(trial));
                k = 21;
            }
            prev = now;
        }
    }

    const double elapsed = seconds_since(start);
    if (elapsed >= 60.0) fail("runtime " + fmt("%.1f s", elapsed) + " >= 60 s");
    r.summary = "loss oracles: " + std::to_string(instances) + " instances, max relative error " + fmt("%.3g", worst) +
                " (limit 1e-9), properties over 10000 pairs, " + fmt("%.1f s", elapsed);
    return r;
}

CriterionResult gradient_check() {
    CriterionResult r{3, false, {}, {}, false};
    const auto start = clock::now();
    const GradCheckResult g = run_gradcheck(GradCheckConfig{});
    const double elapsed = seconds_since(start);
    r.pass = g.max_rel_error <= 1e-3 && g.parameter_count <= 5000 && g.probes.size() == 100 && elapsed < 300.0;
    r.summary = "gradient check: " + std::to_string(g.parameter_count) + " parameters, " + std::to_string(g.probes.size()) +
                " probes, max relative error " + fmt("%.3g", g.max_rel_error) + " (limit 1e-3), " +
                std::to_string(g.refined_probes) + " probes refined near a clamp, " + fmt("%.1f s", elapsed);
    return r;
}

CriterionResult frozen_and_deterministic() {
    CriterionResult r{4, false, {}, {}, false};
    auto set = std::make_shared<const LabeledImageSet>(testing::synthetic_set(96, 4, 32, 17));

    DiscConfig arch;  // convnet-a at 32x32, with batch norm running statistics in the digest
    arch.num_classes = 4;
    TrainConfig config;
    config.seed = 23;
    config.batch_size = 4;
    config.target_class = 2;
    config.max_steps = 6;
    config.generator.width = 8;
    config.generator.res_blocks = 2;

    auto run = [&](std::uint32_t& before, std::uint32_t& after) {
        DiscriminatorEnsemble<float> discs;
        discs.members.emplace_back(arch, 5);
        discs.members.back().freeze();
        before = discs.members.back().digest();
        auto streams = make_streams(set, config.target_class, config.batch_size, config.seed);
        auto result = train_generator(config, discs, streams.source, streams.target);
        after = discs.members.back().digest();
        std::vector<std::string> lines;
        for (const auto& rec : result.telemetry) lines.push_back(telemetry_line(rec));
        return lines;
    };
    std::uint32_t b1 = 0, a1 = 0, b2 = 0, a2 = 0;
    const auto first = run(b1, a1);
    const auto second = run(b2, a2);
    const bool frozen = b1 == a1 && b2 == a2;
    const bool same = first == second && first.size() == 6;
    r.pass = frozen && same;
    char digest[64];
    std::snprintf(digest, sizeof digest, "%08x -> %08x", b1, a1);
    r.summary = std::string("frozen surrogate and determinism: digest ") + digest + ", " + std::to_string(first.size()) +
                " telemetry lines, runs " + (same ? "identical" : "differ");
    return r;
}

}  // namespace ttp::acceptance
