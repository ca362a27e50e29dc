#pragma once

#include "ttp/data.hpp"
#include "ttp/models.hpp"
#include "ttp/projection.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ttp {

struct AdversarialBatch {
    Tensor<float> images;   // x'_s
    Tensor<float> anchors;  // x_s
    Budget budget;
    std::string source_tag;
    int target_class = -1;
};

// Throws BudgetViolation unless every pixel is in [0, 1] and within epsilon of its anchor.
void check_budget(const Tensor<float>& images, const Tensor<float>& anchors, const Budget& budget);

// One generator forward pass followed by the smooth projection. No augmentation.
AdversarialBatch craft(Generator<float>& gen, const Tensor<float>& batch, const Budget& budget,
                       const SmoothingKernel& kernel = SmoothingKernel::binomial(), int target_class = -1,
                       std::string source_tag = {});

struct IterativeAttackConfig {
    std::size_t steps = 100;
    double alpha = 2.0 / 255.0;
    double mu = 1.0;  // momentum decay, MIM only
};

// Targeted PGD: x <- clip_{eps, [0,1]}(x - alpha * sign(grad_x CE(x, t))). The
// surrogate is frozen (inference mode) by this call.
AdversarialBatch pgd_targeted(Discriminator<float>& surrogate, const Tensor<float>& batch, int target_class,
                              const Budget& budget, const IterativeAttackConfig& config = {});

// Targeted MIM: g <- mu g + grad / |grad|_1 (per sample), x <- clip(x - alpha * sign(g)).
AdversarialBatch mim_targeted(Discriminator<float>& surrogate, const Tensor<float>& batch, int target_class,
                              const Budget& budget, const IterativeAttackConfig& config = {});

// Per-channel median filter with reflect padding. Throws BadWindow for even or zero windows.
Tensor<float> median_blur(const Tensor<float>& batch, std::size_t window = 5);

enum class Defense { None, Identity, MedianBlur };
Defense parse_defense(std::string_view name);
std::string to_string(Defense defense);
Tensor<float> apply_defense(Defense defense, const Tensor<float>& batch);

struct TransferReport {
    std::map<int, double> per_target;               // fraction of perturbed non-target samples predicted as target
    std::map<int, std::size_t> per_target_samples;  // evaluated samples per target
    double mean_target_accuracy = 0.0;
    std::string victim_tag;
    std::string surrogate_tag;
    std::string attack_tag;
    double eps255 = 0.0;
    std::string defense_tag = "none";
    std::size_t sample_count = 0;
    bool white_box = false;  // victim == surrogate; never mixed into black-box summaries
    std::string fingerprint;
};

nlohmann::ordered_json to_json(const TransferReport& report);
TransferReport report_from_json(const nlohmann::json& j);

struct EvalOptions {
    Budget budget;
    Defense defense = Defense::None;
    std::string victim_tag;
    std::string surrogate_tag;
    std::string attack_tag = "generator";
    std::size_t batch_size = 256;
};

// Produces adversaries for clean images with the given target class.
using CraftFn = std::function<Tensor<float>(int target_class, const Tensor<float>& clean)>;

// For each target t: craft adversaries for every sample with label != t, apply
// the defense, classify with the victim and record the fraction predicted t.
// The budget is re-asserted on every crafted batch.
TransferReport evaluate_attack(const std::vector<int>& targets, const CraftFn& craft_fn, Discriminator<float>& victim,
                               const LabeledImageSet& test, const EvalOptions& options);

struct TaggedGenerator {
    Generator<float>* generator = nullptr;
    std::optional<int> target_class;
    std::string surrogate_tag;
};

// Throws MissingTargetTag if a generator carries no target class.
TransferReport evaluate_transfer(const std::vector<TaggedGenerator>& gens, Discriminator<float>& victim,
                                 const LabeledImageSet& test, const EvalOptions& options,
                                 const SmoothingKernel& kernel = SmoothingKernel::binomial());

// Surrogate x victim grid of reports.
struct TransferMatrix {
    std::vector<std::string> surrogates;
    std::vector<std::string> victims;
    std::vector<std::vector<TransferReport>> cells;  // [surrogate][victim]

    nlohmann::ordered_json to_json() const;
    std::string to_csv() const;
};

struct VictimRef {
    Discriminator<float>* model = nullptr;
    std::string tag;
};

TransferMatrix transfer_matrix(const std::map<std::string, std::vector<TaggedGenerator>>& gens_by_surrogate,
                               const std::vector<VictimRef>& victims, const LabeledImageSet& test,
                               const EvalOptions& options,
                               const SmoothingKernel& kernel = SmoothingKernel::binomial());

// Row name of a report: surrogate, then ":attack" unless it is a generator,
// then "@defense" when one was applied.
std::string matrix_row_label(const TransferReport& report);

// Arranges already computed reports into a grid keyed by (row label, victim).
// Throws InvalidArgument when two reports land in the same cell.
TransferMatrix assemble_matrix(const std::vector<TransferReport>& reports);

}  // namespace ttp
