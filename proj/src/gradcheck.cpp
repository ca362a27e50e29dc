#include "ttp/gradcheck.hpp"

#include "ttp/augment.hpp"
#include "ttp/losses.hpp"
#include "ttp/models.hpp"
#include "ttp/projection.hpp"
#include "ttp/rng.hpp"
#include "ttp/train.hpp"

#include <algorithm>
#include <cmath>

namespace ttp {

namespace {

Tensor<double> random_images(Shape shape, Rng& rng) {
    Tensor<double> t(std::move(shape));
    for (auto& v : t.values()) v = uniform(rng, 0.0, 1.0);
    return t;
}

}  // namespace

GradCheckResult run_gradcheck(const GradCheckConfig& cfg) {
    const std::size_t n = cfg.batch;
    const Budget budget = Budget::from_255(cfg.eps255);
    const LossSwitches switches;  // ttp objective, all three terms
    const int target = 0;

    Generator<double> gen(GeneratorConfig{GeneratorArch::Toy, 3, cfg.gen_width, 0}, derive_seed(cfg.seed, "gc-gen"));
    DiscriminatorEnsemble<double> discs;
    discs.members.emplace_back(DiscConfig{DiscArch::Toy, 3, cfg.side, cfg.side, cfg.classes, 4, 0},
                               derive_seed(cfg.seed, "gc-disc"));
    discs.members.front().freeze();

    Rng rng(derive_seed(cfg.seed, "gc-data"));
    const Tensor<double> x_s = random_images({n, 3, cfg.side, cfg.side}, rng);
    const Tensor<double> x_t = random_images({n, 3, cfg.side, cfg.side}, rng);
    const Tensor<double> x_aug =
        augment_batch(x_s.cast<float>(), AugmentPolicy{}, derive_seed(cfg.seed, "gc-augment")).cast<double>();
    const Tensor<double> anchors = concat_rows(x_s, x_aug);

    SmoothProjection<double> proj(budget, SmoothingKernel::binomial());
    SmoothProjection<double> probe_proj(budget, SmoothingKernel::binomial());
    auto loss_only = [&] {
        const Tensor<double> adv = probe_proj.forward(gen.forward(anchors), anchors);
        return ensemble_objective(discs, adv, x_t, n, true, target, switches).loss.total;
    };

    // analytic
    gen.zero_grad();
    const Tensor<double> adv = proj.forward(gen.forward(anchors), anchors);
    auto eval = ensemble_objective(discs, adv, x_t, n, true, target, switches);
    gen.backward(proj.backward(eval.grad_adv));

    GradCheckResult result;
    result.loss = eval.loss.total;
    auto params = gen.parameters();
    std::vector<std::pair<std::size_t, std::size_t>> coords;  // (parameter, element)
    for (std::size_t p = 0; p < params.size(); ++p) {
        for (std::size_t i = 0; i < params[p].param->value.size(); ++i) coords.emplace_back(p, i);
    }
    result.parameter_count = coords.size();

    Rng pick(derive_seed(cfg.seed, "gc-probe"));
    for (std::size_t i = coords.size(); i > 1; --i) std::swap(coords[i - 1], coords[uniform_index(pick, i)]);
    coords.resize(std::min(cfg.probes, coords.size()));

    const std::vector<unsigned char> base_mask = proj.pass_mask();
    for (const auto& [p, i] : coords) {
        double& theta = params[p].param->value[i];
        const double saved = theta;
        GradProbe probe;
        probe.name = params[p].name;
        probe.index = i;
        probe.analytic = params[p].param->grad[i];
        probe.step = cfg.step;
        for (std::size_t attempt = 0;; ++attempt) {
            theta = saved + probe.step;
            const double up = loss_only();
            const bool up_same = probe_proj.pass_mask() == base_mask;
            theta = saved - probe.step;
            const double down = loss_only();
            const bool down_same = probe_proj.pass_mask() == base_mask;
            theta = saved;
            probe.numeric = (up - down) / (2.0 * probe.step);
            if ((up_same && down_same) || attempt == cfg.max_refinements) break;
            if (attempt == 0) ++result.refined_probes;
            probe.step /= 10.0;
        }
        probe.rel_error = std::abs(probe.analytic - probe.numeric) /
                          std::max({std::abs(probe.analytic), std::abs(probe.numeric), cfg.floor});
        result.max_rel_error = std::max(result.max_rel_error, probe.rel_error);
        result.probes.push_back(std::move(probe));
    }
    return result;
}

}  // namespace ttp
