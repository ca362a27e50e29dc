#pragma once

#include "ttp/augment.hpp"
#include "ttp/data.hpp"
#include "ttp/losses.hpp"
#include "ttp/models.hpp"
#include "ttp/projection.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace ttp {

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamHyper {
    double lr = 1e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
struct AdamState {
    std::vector<Tensor<T>> m;
    std::vector<Tensor<T>> v;
    std::uint64_t step = 0;
};

// One bias-corrected Adam update of every tensor in `params`. The state is
// lazily shaped on first use. Throws ShapeMismatch.
template <typename T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>* const> grads, AdamState<T>& state,
               const AdamHyper& hyper);

// Adam over the trainable parameters of a model.
template <typename T>
class Adam {
public:
    Adam(std::vector<nn::NamedParameter<T>> params, AdamHyper hyper);
    void step();
    void zero_grad();
    const AdamState<T>& state() const { return state_; }

private:
    std::vector<nn::NamedParameter<T>> params_;
    AdamHyper hyper_;
    AdamState<T> state_;
};

// ---------------------------------------------------------------------------
// Discriminator pretraining (supervised, cross-entropy).
// ---------------------------------------------------------------------------

struct DiscTrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 128;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    double min_accuracy = 0.0;  // DidNotConverge below this test accuracy
    bool augment = true;        // random 4-pixel translation + horizontal flip
};

struct DiscEpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double test_accuracy = 0.0;
};

struct DiscTrainResult {
    Discriminator<float> model;
    double test_accuracy = 0.0;
    std::vector<DiscEpochRecord> history;
};

// Evaluates on `test` (or on `train` if absent). Throws InsufficientSamples,
// DidNotConverge.
DiscTrainResult train_discriminator(const LabeledImageSet& train, const LabeledImageSet* test, DiscConfig arch,
                                    const DiscTrainConfig& config,
                                    const std::function<void(const DiscEpochRecord&)>& on_epoch = {});

std::vector<int> predict(Discriminator<float>& model, const Tensor<float>& images, std::size_t batch_size = 256);
double accuracy(Discriminator<float>& model, const LabeledImageSet& set, std::size_t batch_size = 256);

// ---------------------------------------------------------------------------
// Generator training
// ---------------------------------------------------------------------------

struct TrainConfig {
    std::size_t epochs = 20;
    double lr = 1e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    std::size_t batch_size = 16;
    Budget budget = Budget::from_255(16);
    int target_class = 0;
    std::uint64_t seed = 0;
    LossSwitches loss;
    SmoothingKernel kernel = SmoothingKernel::binomial();
    AugmentPolicy augment;
    GeneratorConfig generator;

    // Steps per epoch; default is one pass over the source pool.
    std::optional<std::size_t> steps_per_epoch;
    // Hard cap on total optimizer steps (0 is allowed).
    std::optional<std::size_t> max_steps;
    // When set, a checkpoint is written after every epoch, and NaN batches are dumped here.
    std::optional<std::filesystem::path> checkpoint_dir;
    std::string surrogate_tag = "surrogate";

    void validate() const;  // throws InvalidArgument
};

template <typename T>
struct EnsembleObjective {
    LossBreakdown loss;  // member mean
    Tensor<T> grad_adv;  // d(mean total) / d(adv)
};

// Scores one projected batch against every member. `adv` holds the N
// adversaries, followed by their N augmented counterparts when aug_branch is set.
template <typename T>
EnsembleObjective<T> ensemble_objective(DiscriminatorEnsemble<T>& discs, const Tensor<T>& adv,
                                        const Tensor<T>& target_images, std::size_t n, bool aug_branch,
                                        int target_class, const LossSwitches& switches);

struct StepRecord {
    std::size_t step = 0;
    std::size_t epoch = 0;
    LossBreakdown loss;
};

std::string telemetry_line(const StepRecord& record);

struct TrainHooks {
    std::function<void(const StepRecord&)> on_step;
    // Called after each epoch with the 1-based epoch index.
    std::function<void(std::size_t, Generator<float>&)> on_epoch;
};

struct GeneratorTrainResult {
    Generator<float> generator;
    std::vector<StepRecord> telemetry;
    std::vector<double> epoch_mean_total;
};

// Frozen-discriminator generator training. Each step: draw (x_s, x_t), build
// the augmented copy, run both source batches through the generator, project
// each around its own anchor, score x'_s, x~'_s and x_t with every member,
// average member losses, and take an Adam step on the generator only.
// Throws InvalidArgument (unfrozen discriminator, stream mismatch), NaNLoss,
// BudgetViolation, StreamExhausted.
GeneratorTrainResult train_generator(const TrainConfig& config, DiscriminatorEnsemble<float>& discs,
                                     BatchStream& source, BatchStream& target, const TrainHooks& hooks = {});

// Starts from an existing generator instead of a fresh initialization.
GeneratorTrainResult train_generator(const TrainConfig& config, Generator<float> init,
                                     DiscriminatorEnsemble<float>& discs, BatchStream& source, BatchStream& target,
                                     const TrainHooks& hooks = {});

// Checkpoint names embed the target class, budget, surrogate tag and epoch:
// gen_t<target>_eps<eps255>_<surrogate>_e<epoch>.ttpw
struct CheckpointTag {
    int target_class = 0;
    double eps255 = 0.0;
    std::string surrogate;
    std::size_t epoch = 0;
};

std::string checkpoint_name(const CheckpointTag& tag);
std::optional<CheckpointTag> parse_checkpoint_name(const std::string& filename);

}  // namespace ttp
