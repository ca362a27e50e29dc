#include "ttp/train.hpp"
#include "ttp/weights.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <numeric>
#include <regex>
#include <sstream>

namespace ttp {

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <typename T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>* const> grads, AdamState<T>& state,
               const AdamHyper& hyper) {
    if (params.size() != grads.size()) throw ShapeMismatch("adam_step: parameter and gradient counts differ");
    if (state.m.empty()) {
        for (const Tensor<T>* p : params) {
            state.m.emplace_back(p->shape());
            state.v.emplace_back(p->shape());
        }
    }
    if (state.m.size() != params.size()) throw ShapeMismatch("adam_step: optimizer state does not match parameters");
    for (std::size_t i = 0; i < params.size(); ++i) {
        require_same_shape(params[i]->shape(), grads[i]->shape(), "adam_step gradient");
        require_same_shape(params[i]->shape(), state.m[i].shape(), "adam_step state");
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(hyper.beta1, t);
    const double c2 = 1.0 - std::pow(hyper.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor<T>& p = *params[i];
        const Tensor<T>& g = *grads[i];
        Tensor<T>& m = state.m[i];
        Tensor<T>& v = state.v[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            const double gj = g[j];
            const double mj = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * gj;
            const double vj = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * gj * gj;
            m[j] = static_cast<T>(mj);
            v[j] = static_cast<T>(vj);
            p[j] = static_cast<T>(p[j] - hyper.lr * (mj / c1) / (std::sqrt(vj / c2) + hyper.eps));
        }
    }
}

template <typename T>
Adam<T>::Adam(std::vector<nn::NamedParameter<T>> params, AdamHyper hyper) : hyper_(hyper) {
    for (auto& p : params) {
        if (p.param->trainable) params_.push_back(p);
    }
}

template <typename T>
void Adam<T>::step() {
    std::vector<Tensor<T>*> values;
    std::vector<const Tensor<T>*> grads;
    for (auto& p : params_) {
        values.push_back(&p.param->value);
        grads.push_back(&p.param->grad);
    }
    adam_step<T>(values, grads, state_, hyper_);
}

template <typename T>
void Adam<T>::zero_grad() {
    for (auto& p : params_) p.param->zero_grad();
}

template void adam_step<float>(std::span<Tensor<float>* const>, std::span<const Tensor<float>* const>,
                               AdamState<float>&, const AdamHyper&);
template void adam_step<double>(std::span<Tensor<double>* const>, std::span<const Tensor<double>* const>,
                                AdamState<double>&, const AdamHyper&);
template class Adam<float>;
template class Adam<double>;

// ---------------------------------------------------------------------------
// Discriminator pretraining
// ---------------------------------------------------------------------------

namespace {

// Mean cross-entropy against integer labels and its gradient w.r.t. the logits.
double labels_ce(const Tensor<float>& logits, std::span<const int> labels, Tensor<float>& grad) {
    const Tensor<double> ls = log_softmax_rows(logits);
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    grad = Tensor<float>(logits.shape());
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        loss -= ls.at(i, static_cast<std::size_t>(labels[i]));
        for (std::size_t j = 0; j < k; ++j) {
            const double onehot = static_cast<int>(j) == labels[i] ? 1.0 : 0.0;
            grad.at(i, j) = static_cast<float>((std::exp(ls.at(i, j)) - onehot) / static_cast<double>(n));
        }
    }
    return loss / static_cast<double>(n);
}

// Random translation by up to 4 pixels (zero fill) and horizontal flip.
void translate_flip(Tensor<float>& batch, Rng& rng) {
    const std::size_t c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
    std::vector<float> tmp(c * h * w);
    for (std::size_t n = 0; n < batch.dim(0); ++n) {
        const long dy = static_cast<long>(uniform_index(rng, 9)) - 4;
        const long dx = static_cast<long>(uniform_index(rng, 9)) - 4;
        const bool flip = uniform(rng, 0.0, 1.0) < 0.5;
        float* img = batch.data() + n * c * h * w;
        std::copy(img, img + c * h * w, tmp.begin());
        for (std::size_t ch = 0; ch < c; ++ch) {
            for (std::size_t y = 0; y < h; ++y) {
                for (std::size_t x = 0; x < w; ++x) {
                    const long sy = static_cast<long>(y) + dy;
                    long sx = static_cast<long>(x) + dx;
                    if (flip) sx = static_cast<long>(w) - 1 - sx;
                    const bool inside = sy >= 0 && sx >= 0 && sy < static_cast<long>(h) && sx < static_cast<long>(w);
                    img[(ch * h + y) * w + x] =
                        inside ? tmp[(ch * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)] : 0.0f;
                }
            }
        }
    }
}

}  // namespace

std::vector<int> predict(Discriminator<float>& model, const Tensor<float>& images, std::size_t batch_size) {
    std::vector<int> out;
    out.reserve(images.dim(0));
    for (std::size_t b = 0; b < images.dim(0); b += batch_size) {
        const Tensor<float> logits = model.features(images.slice_rows(b, std::min(images.dim(0), b + batch_size)));
        for (std::size_t i = 0; i < logits.dim(0); ++i) {
            auto row = logits.row(i);
            out.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
        }
    }
    return out;
}

double accuracy(Discriminator<float>& model, const LabeledImageSet& set, std::size_t batch_size) {
    if (set.size() == 0) return 0.0;
    const auto pred = predict(model, set.images, batch_size);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == set.labels[i];
    return static_cast<double>(correct) / static_cast<double>(set.size());
}

DiscTrainResult train_discriminator(const LabeledImageSet& train, const LabeledImageSet* test, DiscConfig arch,
                                    const DiscTrainConfig& config,
                                    const std::function<void(const DiscEpochRecord&)>& on_epoch) {
    if (train.size() < 2) {
        throw InsufficientSamples("discriminator training needs at least 2 samples, got " + std::to_string(train.size()));
    }
    if (config.epochs == 0 || config.batch_size == 0 || !(config.lr > 0)) {
        throw InvalidArgument("discriminator training needs epochs >= 1, batch_size >= 1, lr > 0");
    }
    arch.channels = train.channels();
    arch.height = train.height();
    arch.width = train.width();
    arch.num_classes = static_cast<std::size_t>(train.num_classes);
    Discriminator<float> model(arch, derive_seed(config.seed, "disc-init"));
    Adam<float> opt(model.parameters(), AdamHyper{config.lr, 0.9, 0.999, 1e-8});

    const std::size_t batch = std::min(config.batch_size, train.size());
    std::vector<std::size_t> order(train.size());
    std::vector<DiscEpochRecord> history;
    const LabeledImageSet& eval_set = test ? *test : train;
    double acc = 0.0;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(derive_seed(config.seed, "disc-epoch", epoch));
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
        model.set_training(true);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t b = 0; b + batch <= order.size(); b += batch) {
            std::span<const std::size_t> idx(order.data() + b, batch);
            Tensor<float> x = train.gather(idx);
            if (config.augment) translate_flip(x, rng);
            std::vector<int> labels;
            for (std::size_t i : idx) labels.push_back(train.labels[i]);
            Tensor<float> grad;
            opt.zero_grad();
            const double loss = labels_ce(model.features(x), labels, grad);
            if (!std::isfinite(loss)) throw NaNLoss("discriminator loss became non-finite at epoch " + std::to_string(epoch + 1));
            model.backward(grad);
            opt.step();
            loss_sum += loss;
            ++batches;
        }
        model.set_training(false);
        acc = accuracy(model, eval_set);
        DiscEpochRecord rec{epoch + 1, batches ? loss_sum / static_cast<double>(batches) : 0.0, acc};
        history.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }
    if (acc < config.min_accuracy) {
        throw DidNotConverge(model.tag() + " reached accuracy " + std::to_string(acc) + " < required " +
                             std::to_string(config.min_accuracy));
    }
    return DiscTrainResult{std::move(model), acc, std::move(history)};
}

// ---------------------------------------------------------------------------
// Generator training
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
    if (epochs < 1) throw InvalidArgument("train.epochs must be >= 1");
    if (!(lr >= 0)) throw InvalidArgument("train.lr must be >= 0");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw InvalidArgument("Adam betas must lie in [0, 1)");
    if (batch_size < 1) throw InvalidArgument("train.batch_size must be >= 1");
    if (!(budget.epsilon >= 0)) throw InvalidArgument("epsilon must be >= 0");
    if (steps_per_epoch && *steps_per_epoch == 0) throw InvalidArgument("steps per epoch must be >= 1");
    augment.validate();
}

std::string telemetry_line(const StepRecord& r) {
    nlohmann::ordered_json j;
    j["step"] = r.step;
    j["epoch"] = r.epoch;
    j["l_dist"] = r.loss.l_dist;
    j["l_aug"] = r.loss.l_aug;
    j["l_sim"] = r.loss.l_sim;
    j["total"] = r.loss.total;
    return j.dump();
}

std::string checkpoint_name(const CheckpointTag& tag) {
    std::ostringstream os;
    os << "gen_t" << tag.target_class << "_eps" << tag.eps255 << "_" << tag.surrogate << "_e" << tag.epoch << ".ttpw";
    return os.str();
}

std::optional<CheckpointTag> parse_checkpoint_name(const std::string& filename) {
    static const std::regex re(R"(^gen_t(\d+)_eps([0-9]+(?:\.[0-9]+)?)_(.+)_e(\d+)\.ttpw$)");
    std::smatch m;
    if (!std::regex_match(filename, m, re)) return std::nullopt;
    return CheckpointTag{std::stoi(m[1]), std::stod(m[2]), m[3], static_cast<std::size_t>(std::stoul(m[4]))};
}

template <typename T>
EnsembleObjective<T> ensemble_objective(DiscriminatorEnsemble<T>& discs, const Tensor<T>& adv,
                                        const Tensor<T>& target_images, std::size_t n, bool aug_branch,
                                        int target_class, const LossSwitches& switches) {
    const double k = static_cast<double>(discs.size());
    Tensor<T> grad_adv(adv.shape());
    double l_dist = 0.0, l_aug = 0.0, l_sim = 0.0;
    for (auto& d : discs.members) {
        // x_t first so the cached activations backward() uses belong to the adversarial batch
        const Tensor<T> feat_t = d.features(target_images);
        const Tensor<T> feat_all = d.features(adv);
        const Tensor<T> feat_adv = aug_branch ? feat_all.slice_rows(0, n) : feat_all;
        const Tensor<T> feat_aug = aug_branch ? feat_all.slice_rows(n, 2 * n) : Tensor<T>();
        const ObjectiveResult<T> r = generator_objective(feat_adv, feat_aug, feat_t, target_class, switches);
        l_dist += r.parts.l_dist / k;
        l_aug += r.parts.l_aug / k;
        l_sim += r.parts.l_sim / k;
        Tensor<T> grad_feat = aug_branch ? concat_rows(r.grad_adv, r.grad_aug) : r.grad_adv;
        for (auto& v : grad_feat.values()) v = static_cast<T>(v / k);
        const Tensor<T> gi = d.backward(grad_feat);
        for (std::size_t i = 0; i < gi.size(); ++i) grad_adv[i] += gi[i];
    }
    return {total_loss(l_dist, l_aug, l_sim), std::move(grad_adv)};
}

template EnsembleObjective<float> ensemble_objective(DiscriminatorEnsemble<float>&, const Tensor<float>&,
                                                     const Tensor<float>&, std::size_t, bool, int, const LossSwitches&);
template EnsembleObjective<double> ensemble_objective(DiscriminatorEnsemble<double>&, const Tensor<double>&,
                                                      const Tensor<double>&, std::size_t, bool, int,
                                                      const LossSwitches&);

GeneratorTrainResult train_generator(const TrainConfig& config, DiscriminatorEnsemble<float>& discs,
                                     BatchStream& source, BatchStream& target, const TrainHooks& hooks) {
    return train_generator(config, Generator<float>(config.generator, derive_seed(config.seed, "generator")), discs,
                           source, target, hooks);
}

GeneratorTrainResult train_generator(const TrainConfig& config, Generator<float> gen,
                                     DiscriminatorEnsemble<float>& discs, BatchStream& source, BatchStream& target,
                                     const TrainHooks& hooks) {
    config.validate();
    if (discs.members.empty()) throw InvalidArgument("generator training needs at least one discriminator");
    for (const auto& d : discs.members) {
        if (!d.frozen()) throw InvalidArgument("discriminator " + d.tag() + " must be frozen before generator training");
    }
    if (source.role() != StreamRole::Source || target.role() != StreamRole::Target) {
        throw InvalidArgument("train_generator expects a source stream and a target stream");
    }
    if (source.target_class() != config.target_class || target.target_class() != config.target_class) {
        throw InvalidArgument("streams were built for a different target class");
    }
    if (source.batch_size() != target.batch_size()) throw InvalidArgument("source and target batch sizes differ");

    const LossSwitches& sw = config.loss;
    const bool aug_branch = sw.objective == Objective::Ttp && (sw.use_aug || sw.use_sim);
    const std::size_t n = source.batch_size();
    const std::size_t steps_per_epoch = config.steps_per_epoch.value_or(source.batches_per_epoch());
    std::size_t total_steps = config.epochs * steps_per_epoch;
    if (config.max_steps) total_steps = std::min(total_steps, *config.max_steps);

    Adam<float> opt(gen.parameters(), AdamHyper{config.lr, config.beta1, config.beta2, 1e-8});
    SmoothProjection<float> proj(config.budget, config.kernel);
    GeneratorTrainResult result{std::move(gen), {}, {}};
    Generator<float>& g = result.generator;
    double epoch_sum = 0.0;
    std::size_t epoch_steps = 0;

    for (std::size_t step = 0; step < total_steps; ++step) {
        const std::size_t epoch = step / steps_per_epoch;
        const Batch src = source.next();
        const Batch tgt = target.next();
        const Tensor<float> anchors =
            aug_branch ? concat_rows(src.images, augment_batch(src.images, config.augment,
                                                               derive_seed(config.seed, "augment-step", step)))
                       : src.images;

        const Tensor<float> raw = g.forward(anchors);
        const Tensor<float> adv = proj.forward(raw, anchors);
        const double dist = linf_distance(adv, anchors);
        if (dist > config.budget.epsilon + 1e-6) {
            throw BudgetViolation("step " + std::to_string(step) + ": l-inf distance " + std::to_string(dist) +
                                  " exceeds epsilon " + std::to_string(config.budget.epsilon));
        }

        const auto [mean, grad_adv] = ensemble_objective(discs, adv, tgt.images, n, aug_branch, config.target_class, sw);

        if (!std::isfinite(mean.total)) {
            std::string where = "(no dump directory configured)";
            if (config.checkpoint_dir) {
                const auto path = *config.checkpoint_dir / ("nan_batch_step" + std::to_string(step) + ".ttpw");
                write_tensors(path, {{"x_s", src.images}, {"x_t", tgt.images}, {"adv", adv}});
                where = path.string();
            }
            throw NaNLoss("non-finite loss at step " + std::to_string(step) + " (l_dist=" + std::to_string(mean.l_dist) +
                          ", l_aug=" + std::to_string(mean.l_aug) + ", l_sim=" + std::to_string(mean.l_sim) +
                          "); batch dumped to " + where);
        }

        opt.zero_grad();
        g.backward(proj.backward(grad_adv));
        opt.step();

        const StepRecord rec{step, epoch + 1, mean};
        result.telemetry.push_back(rec);
        if (hooks.on_step) hooks.on_step(rec);
        epoch_sum += mean.total;
        ++epoch_steps;

        const bool epoch_end = (step + 1) % steps_per_epoch == 0 || step + 1 == total_steps;
        if (epoch_end) {
            result.epoch_mean_total.push_back(epoch_sum / static_cast<double>(epoch_steps));
            epoch_sum = 0.0;
            epoch_steps = 0;
            if (config.checkpoint_dir) {
                const CheckpointTag tag{config.target_class, config.budget.eps255(), config.surrogate_tag, epoch + 1};
                save_weights(g, *config.checkpoint_dir / checkpoint_name(tag));
            }
            if (hooks.on_epoch) hooks.on_epoch(epoch + 1, g);
        }
    }
    return result;
}

}  // namespace ttp
