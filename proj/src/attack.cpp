#include "ttp/attack.hpp"

#include "ttp/losses.hpp"
#include "ttp/parallel.hpp"
#include "ttp/train.hpp"
#include "ttp/version.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace ttp {

void check_budget(const Tensor<float>& images, const Tensor<float>& anchors, const Budget& budget) {
    require_same_shape(images.shape(), anchors.shape(), "check_budget");
    // float rounding of anchor +- eps can land one ulp outside the ball
    const double tol = budget.epsilon + 1e-6;
    for (std::size_t i = 0; i < images.size(); ++i) {
        const float v = images[i];
        if (!(v >= 0.0f && v <= 1.0f) || std::abs(static_cast<double>(v) - anchors[i]) > tol) {
            throw BudgetViolation("pixel " + std::to_string(i) + " = " + std::to_string(v) + " breaks the " +
                                  std::to_string(budget.eps255()) + "/255 budget around " +
                                  std::to_string(anchors[i]));
        }
    }
}

AdversarialBatch craft(Generator<float>& gen, const Tensor<float>& batch, const Budget& budget,
                       const SmoothingKernel& kernel, int target_class, std::string source_tag) {
    AdversarialBatch out;
    out.images = project(gen.forward(batch), batch, budget, kernel);
    out.anchors = batch;
    out.budget = budget;
    out.source_tag = std::move(source_tag);
    out.target_class = target_class;
    check_budget(out.images, out.anchors, budget);
    return out;
}

namespace {

void clip_step(Tensor<float>& x, const Tensor<float>& anchor, double eps) {
    for (std::size_t i = 0; i < x.size(); ++i) {
        const float lo = std::max(0.0f, static_cast<float>(anchor[i] - eps));
        const float hi = std::min(1.0f, static_cast<float>(anchor[i] + eps));
        x[i] = std::clamp(x[i], lo, hi);
    }
}

float sign(double v) { return v > 0 ? 1.0f : (v < 0 ? -1.0f : 0.0f); }

AdversarialBatch iterative_attack(Discriminator<float>& surrogate, const Tensor<float>& batch, int target_class,
                                  const Budget& budget, const IterativeAttackConfig& config, bool momentum) {
    if (target_class < 0 || static_cast<std::size_t>(target_class) >= surrogate.output_dim()) {
        throw BadClassIndex("target class " + std::to_string(target_class) + " out of range");
    }
    if (!surrogate.frozen()) surrogate.freeze();

    Tensor<float> x = batch;
    Tensor<double> g(batch.shape());
    const std::size_t n = batch.dim(0), per = batch.row_size();
    for (std::size_t step = 0; step < config.steps; ++step) {
        const Tensor<float> logits = surrogate.features(x);
        const Tensor<float> grad = surrogate.backward(ce_target_loss_grad(logits, target_class));
        if (momentum) {
            for (std::size_t s = 0; s < n; ++s) {
                double l1 = 0.0;
                for (std::size_t j = 0; j < per; ++j) l1 += std::abs(static_cast<double>(grad[s * per + j]));
                l1 = std::max(l1, 1e-12);
                for (std::size_t j = 0; j < per; ++j) g[s * per + j] = config.mu * g[s * per + j] + grad[s * per + j] / l1;
            }
            for (std::size_t i = 0; i < x.size(); ++i) x[i] -= static_cast<float>(config.alpha) * sign(g[i]);
        } else {
            for (std::size_t i = 0; i < x.size(); ++i) x[i] -= static_cast<float>(config.alpha) * sign(grad[i]);
        }
        clip_step(x, batch, budget.epsilon);
    }

    AdversarialBatch out;
    out.images = std::move(x);
    out.anchors = batch;
    out.budget = budget;
    out.source_tag = surrogate.tag();
    out.target_class = target_class;
    check_budget(out.images, out.anchors, budget);
    return out;
}

}  // namespace

AdversarialBatch pgd_targeted(Discriminator<float>& surrogate, const Tensor<float>& batch, int target_class,
                              const Budget& budget, const IterativeAttackConfig& config) {
    return iterative_attack(surrogate, batch, target_class, budget, config, false);
}

AdversarialBatch mim_targeted(Discriminator<float>& surrogate, const Tensor<float>& batch, int target_class,
                              const Budget& budget, const IterativeAttackConfig& config) {
    return iterative_attack(surrogate, batch, target_class, budget, config, true);
}

// ---------------------------------------------------------------------------

Tensor<float> median_blur(const Tensor<float>& batch, std::size_t window) {
    if (window == 0 || window % 2 == 0) throw BadWindow("median window must be odd, got " + std::to_string(window));
    if (batch.rank() != 4) throw ShapeMismatch("median_blur expects N x C x H x W, got " + shape_string(batch.shape()));
    const std::size_t n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
    const long r = static_cast<long>(window / 2);
    if (window > 1 && (h < 2 || w < 2 || static_cast<std::size_t>(r) >= std::min(h, w))) {
        throw BadWindow("median window " + std::to_string(window) + " too large for " + shape_string(batch.shape()));
    }
    Tensor<float> out(batch.shape());
    parallel_for(n * c, [&](std::size_t plane) {
        const float* src = batch.data() + plane * h * w;
        float* dst = out.data() + plane * h * w;
        std::vector<float> buf(window * window);
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                std::size_t k = 0;
                for (long dy = -r; dy <= r; ++dy) {
                    const std::size_t yy = reflect_index(static_cast<long>(y) + dy, h);
                    for (long dx = -r; dx <= r; ++dx) buf[k++] = src[yy * w + reflect_index(static_cast<long>(x) + dx, w)];
                }
                auto mid = buf.begin() + static_cast<long>(buf.size() / 2);
                std::nth_element(buf.begin(), mid, buf.end());
                dst[y * w + x] = *mid;
            }
        }
    });
    return out;
}

Defense parse_defense(std::string_view name) {
    if (name == "none") return Defense::None;
    if (name == "identity") return Defense::Identity;
    if (name == "median" || name == "median-blur") return Defense::MedianBlur;
    throw InvalidArgument("unknown defense '" + std::string(name) + "'");
}

std::string to_string(Defense defense) {
    switch (defense) {
        case Defense::None: return "none";
        case Defense::Identity: return "identity";
        case Defense::MedianBlur: return "median-blur";
    }
    return "unknown";
}

Tensor<float> apply_defense(Defense defense, const Tensor<float>& batch) {
    return defense == Defense::MedianBlur ? median_blur(batch, 5) : batch;
}

// ---------------------------------------------------------------------------

nlohmann::ordered_json to_json(const TransferReport& report) {
    nlohmann::ordered_json j;
    j["victim"] = report.victim_tag;
    j["surrogate"] = report.surrogate_tag;
    j["attack"] = report.attack_tag;
    j["eps255"] = report.eps255;
    j["defense"] = report.defense_tag;
    j["white_box"] = report.white_box;
    j["sample_count"] = report.sample_count;
    j["mean_target_accuracy"] = report.mean_target_accuracy;
    nlohmann::ordered_json per = nlohmann::ordered_json::object();
    for (const auto& [t, acc] : report.per_target) {
        per[std::to_string(t)] = {{"accuracy", acc}, {"samples", report.per_target_samples.at(t)}};
    }
    j["per_target"] = std::move(per);
    j["fingerprint"] = report.fingerprint;
    return j;
}

TransferReport report_from_json(const nlohmann::json& j) {
    try {
        TransferReport r;
        r.victim_tag = j.at("victim").get<std::string>();
        r.surrogate_tag = j.at("surrogate").get<std::string>();
        r.attack_tag = j.value("attack", std::string("generator"));
        r.eps255 = j.at("eps255").get<double>();
        r.defense_tag = j.value("defense", std::string("none"));
        r.white_box = j.value("white_box", false);
        r.sample_count = j.at("sample_count").get<std::size_t>();
        r.mean_target_accuracy = j.at("mean_target_accuracy").get<double>();
        for (const auto& [key, v] : j.at("per_target").items()) {
            const int t = std::stoi(key);
            r.per_target[t] = v.at("accuracy").get<double>();
            r.per_target_samples[t] = v.at("samples").get<std::size_t>();
        }
        r.fingerprint = j.value("fingerprint", std::string());
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw MalformedFile(std::string("transfer report: ") + e.what());
    }
}

TransferReport evaluate_attack(const std::vector<int>& targets, const CraftFn& craft_fn, Discriminator<float>& victim,
                               const LabeledImageSet& test, const EvalOptions& options) {
    if (targets.empty()) throw InvalidArgument("evaluate_attack needs at least one target");
    if (options.batch_size == 0) throw InvalidArgument("batch size must be positive");
    if (!victim.frozen()) victim.freeze();

    TransferReport report;
    report.victim_tag = options.victim_tag.empty() ? victim.tag() : options.victim_tag;
    report.surrogate_tag = options.surrogate_tag;
    report.attack_tag = options.attack_tag;
    report.eps255 = options.budget.eps255();
    report.defense_tag = to_string(options.defense);
    report.white_box = !options.surrogate_tag.empty() && options.surrogate_tag == report.victim_tag;
    report.fingerprint = build_fingerprint();

    std::set<int> seen;
    for (int t : targets) {
        if (t < 0 || t >= test.num_classes) throw BadClassIndex("target class " + std::to_string(t) + " out of range");
        if (!seen.insert(t).second) throw InvalidArgument("target class " + std::to_string(t) + " listed twice");

        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < test.size(); ++i) {
            if (test.labels[i] != t) idx.push_back(i);
        }
        std::size_t hits = 0;
        for (std::size_t b = 0; b < idx.size(); b += options.batch_size) {
            const std::span<const std::size_t> rows(idx.data() + b, std::min(idx.size(), b + options.batch_size) - b);
            const Tensor<float> clean = test.gather(rows);
            const Tensor<float> adv = craft_fn(t, clean);
            check_budget(adv, clean, options.budget);
            for (int p : predict(victim, apply_defense(options.defense, adv), options.batch_size)) hits += p == t;
        }
        report.per_target[t] = idx.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(idx.size());
        report.per_target_samples[t] = idx.size();
        report.sample_count += idx.size();
    }
    double sum = 0.0;
    for (const auto& [t, acc] : report.per_target) sum += acc;
    report.mean_target_accuracy = sum / static_cast<double>(report.per_target.size());
    return report;
}

TransferReport evaluate_transfer(const std::vector<TaggedGenerator>& gens, Discriminator<float>& victim,
                                 const LabeledImageSet& test, const EvalOptions& options,
                                 const SmoothingKernel& kernel) {
    std::map<int, Generator<float>*> by_target;
    for (const auto& g : gens) {
        if (!g.target_class) throw MissingTargetTag("generator for surrogate '" + g.surrogate_tag + "' has no target class");
        if (!g.generator) throw InvalidArgument("null generator");
        by_target[*g.target_class] = g.generator;
    }
    std::vector<int> targets;
    for (const auto& [t, g] : by_target) targets.push_back(t);

    EvalOptions opts = options;
    if (opts.surrogate_tag.empty() && !gens.empty()) opts.surrogate_tag = gens.front().surrogate_tag;
    return evaluate_attack(
        targets,
        [&](int t, const Tensor<float>& clean) {
            return craft(*by_target.at(t), clean, opts.budget, kernel, t).images;
        },
        victim, test, opts);
}

// ---------------------------------------------------------------------------

nlohmann::ordered_json TransferMatrix::to_json() const {
    nlohmann::ordered_json j;
    j["surrogates"] = surrogates;
    j["victims"] = victims;
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const auto& row : cells) {
        nlohmann::ordered_json r = nlohmann::ordered_json::array();
        for (const auto& cell : row) r.push_back(ttp::to_json(cell));
        rows.push_back(std::move(r));
    }
    j["cells"] = std::move(rows);
    j["fingerprint"] = build_fingerprint();
    return j;
}

std::string TransferMatrix::to_csv() const {
    std::ostringstream os;
    os << "surrogate";
    for (const auto& v : victims) os << ',' << v;
    os << '\n';
    for (std::size_t s = 0; s < surrogates.size(); ++s) {
        os << surrogates[s];
        for (const auto& cell : cells[s]) {
            os << ',';
            if (!cell.victim_tag.empty()) {
                os << cell.mean_target_accuracy;
                if (cell.white_box) os << "*";
            }
        }
        os << '\n';
    }
    return os.str();
}

TransferMatrix transfer_matrix(const std::map<std::string, std::vector<TaggedGenerator>>& gens_by_surrogate,
                               const std::vector<VictimRef>& victims, const LabeledImageSet& test,
                               const EvalOptions& options, const SmoothingKernel& kernel) {
    TransferMatrix m;
    for (const auto& v : victims) m.victims.push_back(v.tag);
    for (const auto& [surrogate, gens] : gens_by_surrogate) {
        m.surrogates.push_back(surrogate);
        auto& row = m.cells.emplace_back();
        for (const auto& v : victims) {
            EvalOptions opts = options;
            opts.surrogate_tag = surrogate;
            opts.victim_tag = v.tag;
            row.push_back(evaluate_transfer(gens, *v.model, test, opts, kernel));
        }
    }
    return m;
}

std::string matrix_row_label(const TransferReport& r) {
    std::string label = r.surrogate_tag;
    if (r.attack_tag != "generator") label += ":" + r.attack_tag;
    if (r.defense_tag != "none") label += "@" + r.defense_tag;
    return label;
}

TransferMatrix assemble_matrix(const std::vector<TransferReport>& reports) {
    TransferMatrix m;
    auto index_of = [](std::vector<std::string>& names, const std::string& name) {
        const auto it = std::find(names.begin(), names.end(), name);
        if (it != names.end()) return static_cast<std::size_t>(it - names.begin());
        names.push_back(name);
        return names.size() - 1;
    };
    std::vector<std::pair<std::size_t, std::size_t>> where;
    for (const auto& r : reports) where.emplace_back(index_of(m.surrogates, matrix_row_label(r)), index_of(m.victims, r.victim_tag));
    m.cells.assign(m.surrogates.size(), std::vector<TransferReport>(m.victims.size()));
    for (std::size_t i = 0; i < reports.size(); ++i) {
        TransferReport& cell = m.cells[where[i].first][where[i].second];
        if (!cell.victim_tag.empty()) {
            throw InvalidArgument("two reports for " + m.surrogates[where[i].first] + " -> " + reports[i].victim_tag);
        }
        cell = reports[i];
    }
    return m;
}

}  // namespace ttp
