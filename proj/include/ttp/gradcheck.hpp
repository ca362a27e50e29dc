#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace ttp {

// Finite-difference check of the full generator objective (distribution,
// augmented and neighbourhood terms, through smoothing and projection) on a
// toy generator and a frozen toy discriminator, in double precision.
struct GradCheckConfig {
    std::uint64_t seed = 7;
    std::size_t probes = 100;
    double step = 1e-4;
    double eps255 = 32.0;
    std::size_t batch = 4;
    std::size_t side = 8;
    std::size_t classes = 5;
    std::size_t gen_width = 8;
    double floor = 1e-7;  // denominator floor for the relative error
    // A probe whose +-step interval crosses a projection clamp boundary is not
    // differentiable there; it is redone with the step divided by 10, at most
    // this many times.
    std::size_t max_refinements = 3;
};

struct GradProbe {
    std::string name;
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
    double step = 0.0;  // step actually used
};

struct GradCheckResult {
    std::size_t parameter_count = 0;
    double loss = 0.0;
    double max_rel_error = 0.0;
    std::size_t refined_probes = 0;  // probes that needed a smaller step
    std::vector<GradProbe> probes;
};

GradCheckResult run_gradcheck(const GradCheckConfig& config = {});

}  // namespace ttp
