#pragma once

#include "ttp/tensor.hpp"

#include <string_view>

namespace ttp {

// Per-component training losses. total == l_dist + l_aug + l_sim exactly.
struct LossBreakdown {
    double l_dist = 0.0;
    double l_aug = 0.0;
    double l_sim = 0.0;
    double total = 0.0;
};

enum class Objective { Ttp, CrossEntropy };
Objective parse_objective(std::string_view name);
std::string_view to_string(Objective objective);

struct LossSwitches {
    Objective objective = Objective::Ttp;
    bool use_aug = true;
    bool use_sim = true;
};

// Disabled components contribute exactly zero.
LossBreakdown total_loss(double l_dist, double l_aug, double l_sim, const LossSwitches& switches = {});

template <typename T>
struct SimilarityMatrix {
    Tensor<T> values;  // N x N
    bool normalized = false;
};

// Value of a scalar loss and its gradients w.r.t. both operands.
template <typename T>
struct PairGrad {
    double value = 0.0;
    Tensor<T> grad_a;
    Tensor<T> grad_b;
};

// Row-wise log-softmax, evaluated in double.
template <typename T>
Tensor<double> log_softmax_rows(const Tensor<T>& logits);

// D_KL(A||B) + D_KL(B||A) with D_KL(A||B) = (1/N) sum_i sum_j s(a_i)_j log(s(a_i)_j / s(b_i)_j),
// s = softmax over the feature axis, row i of a paired with row i of b.
// Evaluated as (1/N) sum (s(a) - s(b)) (log s(a) - log s(b)), which is
// bit-for-bit symmetric in (a, b).
template <typename T>
double paired_symmetric_kl(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
PairGrad<T> paired_symmetric_kl_grad(const Tensor<T>& a, const Tensor<T>& b);

// Distribution matching between adversarial and target features.
template <typename T>
double distribution_loss(const Tensor<T>& feat_adv, const Tensor<T>& feat_target) {
    return paired_symmetric_kl(feat_adv, feat_target);
}

// Same matching on the augmented-adversarial branch; target features are never augmented.
template <typename T>
double augmented_distribution_loss(const Tensor<T>& feat_aug_adv, const Tensor<T>& feat_target) {
    return paired_symmetric_kl(feat_aug_adv, feat_target);
}

// S_ij = <a_i, b_j> / (|a_i| |b_j|). Throws ZeroNormRow.
template <typename T>
SimilarityMatrix<T> similarity_matrix(const Tensor<T>& a, const Tensor<T>& b);

// Gradients of sum_ij grad_s_ij * S_ij w.r.t. a and b.
template <typename T>
PairGrad<T> similarity_matrix_backward(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& grad_s);

template <typename T>
SimilarityMatrix<T> row_softmax(const SimilarityMatrix<T>& s);

// sum_ij T log(T/S) + sum_ij S log(S/T) over two row-normalized matrices
// (target first); no 1/N factor.
template <typename T>
double neighbourhood_loss(const SimilarityMatrix<T>& s_src_norm, const SimilarityMatrix<T>& s_tgt_norm);

// Neighbourhood loss straight from raw cosine similarities, treating each row
// as logits: equals neighbourhood_loss(row_softmax(src), row_softmax(tgt)).
// grad_a is w.r.t. the source similarities, grad_b w.r.t. the target ones.
template <typename T>
PairGrad<T> neighbourhood_loss_grad(const Tensor<T>& s_src_raw, const Tensor<T>& s_tgt_raw);

// Mean over the batch of -log softmax(f_i)[t]. Throws BadClassIndex.
template <typename T>
double ce_target_loss(const Tensor<T>& feat_adv, int target_class);

template <typename T>
Tensor<T> ce_target_loss_grad(const Tensor<T>& feat_adv, int target_class);

// Full generator objective for one discriminator.
template <typename T>
struct ObjectiveResult {
    LossBreakdown parts;
    Tensor<T> grad_adv;  // d total / d features(x'_s)
    Tensor<T> grad_aug;  // d total / d features(x~'_s); empty when the augmented branch is off
};

// feat_aug may be empty when neither l_aug nor l_sim is enabled. For the CE
// objective, l_dist holds the cross-entropy and the other parts are zero.
template <typename T>
ObjectiveResult<T> generator_objective(const Tensor<T>& feat_adv, const Tensor<T>& feat_aug,
                                       const Tensor<T>& feat_target, int target_class, const LossSwitches& switches);

}  // namespace ttp
