#include "vla/dataset.hpp"

#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace vla {

using nlohmann::json;

Demonstration run_oracle_episode(const std::string& task, uint64_t seed, const EnvConfig& cfg) {
    SimEnv env(task, cfg);
    Demonstration demo;
    demo.task = task;
    demo.seed = seed;
    Observation obs = env.reset(seed);
    demo.instruction = obs.instruction;
    while (!env.state().done) {
        DemoStep step;
        step.images = env.render_quantized();
        step.proprio = obs.proprio;
        step.action = env.oracle_action();
        auto result = env.step(step.action);
        demo.steps.push_back(std::move(step));
        obs = std::move(result.obs);
    }
    demo.success = env.state().success;
    return demo;
}

namespace {

json demo_to_json(const Demonstration& d, int image_size) {
    json steps = json::array();
    for (const auto& s : d.steps) {
        json imgs = json::array();
        for (const auto& img : s.images) {
            imgs.push_back({{"shape", {image_size, image_size, 3}}, {"data", img}});
        }
        steps.push_back({{"images", imgs}, {"proprio", s.proprio}, {"action", s.action}});
    }
    return json{{"task", d.task},
                {"seed", d.seed},
                {"instruction", d.instruction},
                {"success", d.success},
                {"steps", steps}};
}

Demonstration demo_from_json(const json& j) {
    Demonstration d;
    d.task = j.at("task").get<std::string>();
    d.seed = j.at("seed").get<uint64_t>();
    d.instruction = j.at("instruction").get<std::string>();
    d.success = j.at("success").get<bool>();
    for (const auto& js : j.at("steps")) {
        DemoStep s;
        for (const auto& ji : js.at("images")) {
            const auto shape = ji.at("shape").get<std::vector<int>>();
            auto data = ji.at("data").get<std::vector<int>>();
            const size_t expected = static_cast<size_t>(shape[0]) * shape[1] * shape[2];
            if (data.size() != expected) {
                throw std::runtime_error("demo record: image data does not match shape header");
            }
            s.images.push_back(std::move(data));
        }
        s.proprio = js.at("proprio").get<std::vector<double>>();
        s.action = js.at("action").get<std::vector<double>>();
        d.steps.push_back(std::move(s));
    }
    return d;
}

}  // namespace

GenStats generate_demos(const std::string& task, int n, uint64_t seed,
                        const std::string& out_path, const EnvConfig& cfg) {
    if (n < 1) throw std::invalid_argument("generate_demos: n must be >= 1");
    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("generate_demos: cannot write " + out_path);

    GenStats stats;
    std::vector<double> act_lo(7, 1e300), act_hi(7, -1e300), prop_lo(7, 1e300), prop_hi(7, -1e300);
    uint64_t next_seed = seed;
    int total_steps = 0;
    while (stats.written < n) {
        Demonstration demo = run_oracle_episode(task, next_seed++, cfg);
        if (!demo.success) {
            ++stats.regenerated;
            continue;
        }
        for (const auto& s : demo.steps) {
            for (int i = 0; i < 7; ++i) {
                act_lo[i] = std::min(act_lo[i], s.action[i]);
                act_hi[i] = std::max(act_hi[i], s.action[i]);
                prop_lo[i] = std::min(prop_lo[i], s.proprio[i]);
                prop_hi[i] = std::max(prop_hi[i], s.proprio[i]);
            }
        }
        total_steps += static_cast<int>(demo.steps.size());
        out << demo_to_json(demo, cfg.image_size).dump() << "\n";
        ++stats.written;
    }
    out.close();

    json manifest{{"task", task},
                  {"demos", stats.written},
                  {"regenerated", stats.regenerated},
                  {"total_steps", total_steps},
                  {"seed", seed},
                  {"image_size", cfg.image_size},
                  {"action_min", act_lo},
                  {"action_max", act_hi},
                  {"proprio_min", prop_lo},
                  {"proprio_max", prop_hi}};
    std::ofstream mout(out_path + ".manifest.json");
    mout << manifest.dump(2) << "\n";
    return stats;
}

std::vector<Demonstration> load_demos(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_demos: cannot read " + path);
    std::vector<Demonstration> demos;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        demos.push_back(demo_from_json(json::parse(line)));
    }
    return demos;
}

}  // namespace vla
