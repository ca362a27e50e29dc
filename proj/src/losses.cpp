#include "ttp/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace ttp {

namespace {

void require_features(const Shape& s, const char* what) {
    if (s.size() != 2 || s[0] == 0 || s[1] == 0) {
        throw ShapeMismatch(std::string(what) + " expects a non-empty N x n matrix, got " + shape_string(s));
    }
}

}  // namespace

Objective parse_objective(std::string_view name) {
    if (name == "ttp") return Objective::Ttp;
    if (name == "ce") return Objective::CrossEntropy;
    throw InvalidArgument("unknown loss objective '" + std::string(name) + "' (expected ttp or ce)");
}

std::string_view to_string(Objective objective) { return objective == Objective::Ttp ? "ttp" : "ce"; }

LossBreakdown total_loss(double l_dist, double l_aug, double l_sim, const LossSwitches& switches) {
    LossBreakdown b;
    b.l_dist = l_dist;
    b.l_aug = switches.use_aug ? l_aug : 0.0;
    b.l_sim = switches.use_sim ? l_sim : 0.0;
    b.total = b.l_dist + b.l_aug + b.l_sim;
    return b;
}

template <typename T>
Tensor<double> log_softmax_rows(const Tensor<T>& logits) {
    require_features(logits.shape(), "log_softmax_rows");
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    Tensor<double> out(logits.shape());
    for (std::size_t i = 0; i < n; ++i) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < k; ++j) m = std::max(m, static_cast<double>(logits.at(i, j)));
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j) s += std::exp(static_cast<double>(logits.at(i, j)) - m);
        // subtract the max before the log-sum so large logits keep their precision
        const double log_s = std::log(s);
        for (std::size_t j = 0; j < k; ++j) out.at(i, j) = (static_cast<double>(logits.at(i, j)) - m) - log_s;
    }
    return out;
}

template <typename T>
double paired_symmetric_kl(const Tensor<T>& a, const Tensor<T>& b) {
    require_features(a.shape(), "paired_symmetric_kl");
    require_same_shape(a.shape(), b.shape(), "paired_symmetric_kl");
    const Tensor<double> la = log_softmax_rows(a), lb = log_softmax_rows(b);
    double sum = 0.0;
    for (std::size_t i = 0; i < la.size(); ++i) sum += (std::exp(la[i]) - std::exp(lb[i])) * (la[i] - lb[i]);
    return sum / static_cast<double>(a.dim(0));
}

template <typename T>
PairGrad<T> paired_symmetric_kl_grad(const Tensor<T>& a, const Tensor<T>& b) {
    require_features(a.shape(), "paired_symmetric_kl");
    require_same_shape(a.shape(), b.shape(), "paired_symmetric_kl");
    const std::size_t n = a.dim(0), k = a.dim(1);
    const double inv_n = 1.0 / static_cast<double>(n);
    const Tensor<double> la = log_softmax_rows(a), lb = log_softmax_rows(b);
    PairGrad<T> r{0.0, Tensor<T>(a.shape()), Tensor<T>(b.shape())};
    std::vector<double> pa(k), pb(k), d(k);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double ea = 0.0, eb = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            pa[j] = std::exp(la.at(i, j));
            pb[j] = std::exp(lb.at(i, j));
            d[j] = la.at(i, j) - lb.at(i, j);
            sum += (pa[j] - pb[j]) * d[j];
            ea += pa[j] * d[j];
            eb += pb[j] * d[j];
        }
        for (std::size_t j = 0; j < k; ++j) {
            r.grad_a.at(i, j) = static_cast<T>(inv_n * (pa[j] * (d[j] - ea) + (pa[j] - pb[j])));
            r.grad_b.at(i, j) = static_cast<T>(inv_n * (-pb[j] * (d[j] - eb) + (pb[j] - pa[j])));
        }
    }
    r.value = sum * inv_n;
    return r;
}

template <typename T>
SimilarityMatrix<T> similarity_matrix(const Tensor<T>& a, const Tensor<T>& b) {
    require_features(a.shape(), "similarity_matrix");
    require_same_shape(a.shape(), b.shape(), "similarity_matrix");
    const std::size_t n = a.dim(0), k = a.dim(1);
    auto norms = [&](const Tensor<T>& m, const char* which) {
        std::vector<double> out(n);
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < k; ++j) s += static_cast<double>(m.at(i, j)) * m.at(i, j);
            out[i] = std::sqrt(s);
            if (!(out[i] > 0.0)) throw ZeroNormRow(std::string(which) + " row " + std::to_string(i) + " has zero norm");
        }
        return out;
    };
    const auto na = norms(a, "first operand"), nb = norms(b, "second operand");
    SimilarityMatrix<T> s{Tensor<T>({n, n}), false};
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double dot = 0.0;
            for (std::size_t q = 0; q < k; ++q) dot += static_cast<double>(a.at(i, q)) * b.at(j, q);
            const bool same_row = std::equal(a.row(i).begin(), a.row(i).end(), b.row(j).begin());
            s.values.at(i, j) = static_cast<T>(same_row ? 1.0 : dot / (na[i] * nb[j]));
        }
    }
    return s;
}

template <typename T>
PairGrad<T> similarity_matrix_backward(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& grad_s) {
    const std::size_t n = a.dim(0), k = a.dim(1);
    auto unit = [&](const Tensor<T>& m, std::vector<double>& norm) {
        Tensor<double> u({n, k});
        norm.assign(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < k; ++j) s += static_cast<double>(m.at(i, j)) * m.at(i, j);
            norm[i] = std::sqrt(s);
            if (!(norm[i] > 0.0)) throw ZeroNormRow("row " + std::to_string(i) + " has zero norm");
            for (std::size_t j = 0; j < k; ++j) u.at(i, j) = m.at(i, j) / norm[i];
        }
        return u;
    };
    std::vector<double> na, nb;
    const Tensor<double> ua = unit(a, na), ub = unit(b, nb);
    PairGrad<T> r{0.0, Tensor<T>(a.shape()), Tensor<T>(b.shape())};
    // d/du_a_i = sum_j G_ij ub_j ; d/du_b_j = sum_i G_ij ua_i ; then project out the radial part.
    auto finish = [&](const Tensor<double>& u, const std::vector<double>& norm, bool rows, const Tensor<double>& other,
                      Tensor<T>& out) {
        std::vector<double> du(k);
        for (std::size_t i = 0; i < n; ++i) {
            std::fill(du.begin(), du.end(), 0.0);
            for (std::size_t j = 0; j < n; ++j) {
                const double g = rows ? grad_s.at(i, j) : grad_s.at(j, i);
                for (std::size_t q = 0; q < k; ++q) du[q] += g * other.at(j, q);
            }
            double radial = 0.0;
            for (std::size_t q = 0; q < k; ++q) radial += u.at(i, q) * du[q];
            for (std::size_t q = 0; q < k; ++q) out.at(i, q) = static_cast<T>((du[q] - u.at(i, q) * radial) / norm[i]);
        }
    };
    finish(ua, na, true, ub, r.grad_a);
    finish(ub, nb, false, ua, r.grad_b);
    return r;
}

template <typename T>
SimilarityMatrix<T> row_softmax(const SimilarityMatrix<T>& s) {
    const Tensor<double> ls = log_softmax_rows(s.values);
    SimilarityMatrix<T> out{Tensor<T>(s.values.shape()), true};
    for (std::size_t i = 0; i < ls.size(); ++i) out.values[i] = static_cast<T>(std::exp(ls[i]));
    return out;
}

template <typename T>
double neighbourhood_loss(const SimilarityMatrix<T>& s_src_norm, const SimilarityMatrix<T>& s_tgt_norm) {
    if (!s_src_norm.normalized || !s_tgt_norm.normalized) {
        throw InvalidArgument("neighbourhood_loss expects row-normalized similarity matrices");
    }
    require_features(s_src_norm.values.shape(), "neighbourhood_loss");
    require_same_shape(s_src_norm.values.shape(), s_tgt_norm.values.shape(), "neighbourhood_loss");
    double sum = 0.0;
    for (std::size_t i = 0; i < s_src_norm.values.size(); ++i) {
        const double t = s_tgt_norm.values[i], s = s_src_norm.values[i];
        sum += (t - s) * (std::log(t) - std::log(s));
    }
    return sum;
}

template <typename T>
PairGrad<T> neighbourhood_loss_grad(const Tensor<T>& s_src_raw, const Tensor<T>& s_tgt_raw) {
    // Sum over rows of the symmetric KL == N * paired_symmetric_kl on rows-as-logits.
    PairGrad<T> kl = paired_symmetric_kl_grad(s_src_raw, s_tgt_raw);
    const double n = static_cast<double>(s_src_raw.dim(0));
    kl.value *= n;
    for (auto& g : kl.grad_a.values()) g = static_cast<T>(g * n);
    for (auto& g : kl.grad_b.values()) g = static_cast<T>(g * n);
    return kl;
}

template <typename T>
double ce_target_loss(const Tensor<T>& feat_adv, int target_class) {
    require_features(feat_adv.shape(), "ce_target_loss");
    if (target_class < 0 || static_cast<std::size_t>(target_class) >= feat_adv.dim(1)) {
        throw BadClassIndex("target class " + std::to_string(target_class) + " outside [0, " +
                            std::to_string(feat_adv.dim(1)) + ")");
    }
    const Tensor<double> ls = log_softmax_rows(feat_adv);
    double sum = 0.0;
    for (std::size_t i = 0; i < ls.dim(0); ++i) sum -= ls.at(i, static_cast<std::size_t>(target_class));
    return sum / static_cast<double>(ls.dim(0));
}

template <typename T>
Tensor<T> ce_target_loss_grad(const Tensor<T>& feat_adv, int target_class) {
    ce_target_loss(feat_adv, target_class);  // validation
    const Tensor<double> ls = log_softmax_rows(feat_adv);
    const double inv_n = 1.0 / static_cast<double>(ls.dim(0));
    Tensor<T> g(feat_adv.shape());
    for (std::size_t i = 0; i < ls.dim(0); ++i) {
        for (std::size_t j = 0; j < ls.dim(1); ++j) {
            const double onehot = static_cast<int>(j) == target_class ? 1.0 : 0.0;
            g.at(i, j) = static_cast<T>(inv_n * (std::exp(ls.at(i, j)) - onehot));
        }
    }
    return g;
}

template <typename T>
ObjectiveResult<T> generator_objective(const Tensor<T>& feat_adv, const Tensor<T>& feat_aug,
                                       const Tensor<T>& feat_target, int target_class, const LossSwitches& switches) {
    ObjectiveResult<T> r;
    if (switches.objective == Objective::CrossEntropy) {
        r.parts = total_loss(ce_target_loss(feat_adv, target_class), 0.0, 0.0, {Objective::CrossEntropy, false, false});
        r.grad_adv = ce_target_loss_grad(feat_adv, target_class);
        return r;
    }

    const PairGrad<T> dist = paired_symmetric_kl_grad(feat_adv, feat_target);
    r.grad_adv = dist.grad_a;
    double l_aug = 0.0, l_sim = 0.0;
    if (switches.use_aug || switches.use_sim) {
        require_same_shape(feat_adv.shape(), feat_aug.shape(), "augmented features");
        r.grad_aug = Tensor<T>(feat_aug.shape());
    }
    if (switches.use_aug) {
        const PairGrad<T> aug = paired_symmetric_kl_grad(feat_aug, feat_target);
        l_aug = aug.value;
        r.grad_aug = aug.grad_a;
    }
    if (switches.use_sim) {
        const SimilarityMatrix<T> s_src = similarity_matrix(feat_adv, feat_aug);
        const SimilarityMatrix<T> s_tgt = similarity_matrix(feat_target, feat_target);
        const PairGrad<T> sim = neighbourhood_loss_grad(s_src.values, s_tgt.values);
        l_sim = sim.value;
        const PairGrad<T> back = similarity_matrix_backward(feat_adv, feat_aug, sim.grad_a);
        for (std::size_t i = 0; i < r.grad_adv.size(); ++i) r.grad_adv[i] += back.grad_a[i];
        for (std::size_t i = 0; i < r.grad_aug.size(); ++i) r.grad_aug[i] += back.grad_b[i];
    }
    r.parts = total_loss(dist.value, l_aug, l_sim, switches);
    return r;
}

#define TTP_INSTANTIATE(T)                                                                                   \
    template Tensor<double> log_softmax_rows(const Tensor<T>&);                                              \
    template double paired_symmetric_kl(const Tensor<T>&, const Tensor<T>&);                                 \
    template PairGrad<T> paired_symmetric_kl_grad(const Tensor<T>&, const Tensor<T>&);                       \
    template SimilarityMatrix<T> similarity_matrix(const Tensor<T>&, const Tensor<T>&);                      \
    template PairGrad<T> similarity_matrix_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);   \
    template SimilarityMatrix<T> row_softmax(const SimilarityMatrix<T>&);                                    \
    template double neighbourhood_loss(const SimilarityMatrix<T>&, const SimilarityMatrix<T>&);              \
    template PairGrad<T> neighbourhood_loss_grad(const Tensor<T>&, const Tensor<T>&);                        \
    template double ce_target_loss(const Tensor<T>&, int);                                                   \
    template Tensor<T> ce_target_loss_grad(const Tensor<T>&, int);                                           \
    template ObjectiveResult<T> generator_objective(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, \
                                                    const LossSwitches&);

TTP_INSTANTIATE(float)
TTP_INSTANTIATE(double)

#undef TTP_INSTANTIATE

}  // namespace ttp
