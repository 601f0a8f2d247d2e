#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>

#include "mseed/config.hpp"
#include "mseed/model.hpp"
#include "mseed/optimizer.hpp"

namespace mseed {

struct TrainProgress {
    std::uint64_t step = 0;  // optimizer steps taken
    std::size_t epoch = 0;   // epoch the next step belongs to
};

struct Checkpoint {
    RunConfig config;
    model::ModelParams params;
    AdamW optimizer;
    TrainProgress progress;
};

/// Directory layout: manifest.json, params/<name>.mst and, once the
/// optimizer has stepped, optimizer/{m,v}/<name>.mst. The directory is
/// replaced as a whole so an interrupted save never leaves a mixed state.
void save_checkpoint(const std::filesystem::path& dir, const RunConfig& config, const model::ModelParams& params,
                     const AdamW& optimizer, const TrainProgress& progress);

/// Validates every tensor shape against the architecture in the stored
/// config. Throws ConfigError on any mismatch or missing file.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

} // namespace mseed
