#pragma once

#include <string>
#include <vector>

#include "vla/simenv.hpp"

namespace vla {

struct DemoStep {
    std::vector<std::vector<int>> images;  // per camera, flat ints 0..255
    std::vector<double> proprio;           // 7
    std::vector<double> action;            // 7
};

struct Demonstration {
    std::string task;
    uint64_t seed = 0;
    std::string instruction;
    bool success = false;
    std::vector<DemoStep> steps;
};

struct GenStats {
    int written = 0;
    int regenerated = 0;  // failed oracle rollouts replaced with fresh seeds
};

// Roll out one oracle episode; returns the recorded demonstration.
Demonstration run_oracle_episode(const std::string& task, uint64_t seed, const EnvConfig& cfg);

// n successful oracle rollouts written as JSON records, one per line.
// A sidecar <out>.manifest.json lists counts and the per-dimension
// action/proprio ranges that feed normalization.
GenStats generate_demos(const std::string& task, int n, uint64_t seed, const std::string& out_path,
                        const EnvConfig& cfg = {});

std::vector<Demonstration> load_demos(const std::string& path);

// image shape header for the record format
struct ImageShape {
    int height, width, channels;
};

}  // namespace vla
