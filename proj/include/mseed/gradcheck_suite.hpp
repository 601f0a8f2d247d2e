#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "mseed/grad_check.hpp"
#include "mseed/model.hpp"

namespace mseed {

struct GradCheckOptions {
    double tol = 1e-4;
    double step = 1e-3;
    double min_step = 1e-6;
    /// Entries probed per model parameter tensor (all entries for small ops).
    std::size_t samples_per_group = 6;
    std::uint64_t seed = 7;
    std::size_t model_height = 16;
    std::size_t model_width = 32;
};

struct GradCheckEntry {
    std::string name;
    GradCheckReport report;
};

struct GradCheckSuite {
    std::vector<GradCheckEntry> entries;
    bool passed = true;
    double max_rel_error = 0.0;
    double seconds = 0.0;
};

/// Central-difference checks of every differentiable op, the fusion decoder,
/// all loss terms and the full model (every parameter tensor, all three
/// fusion modes) built from `config`.
GradCheckSuite run_gradcheck_suite(const model::ModelConfig& config, const GradCheckOptions& options = {});

nlohmann::json to_json(const GradCheckSuite& suite);

} // namespace mseed
