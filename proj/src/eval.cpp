#include "vla/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>

namespace vla {

namespace {

EnvConfig eval_env_config(const std::string& perturbation) {
    EnvConfig cfg;
    if (!perturbation.empty() && perturbation != "clean") cfg = perturb(cfg, perturbation);
    return cfg;
}

// transit-corridor mode distance: distance of held-cube gripper positions
// inside the wall band to the nearest demonstration lane (y = 0.88 / 0.12)
struct ModeTracker {
    double sum = 0.0;
    int n = 0;
    void observe(const WorldState& s) {
        if (s.task != "stack_cubes" || s.held_object != 0) return;
        const double x = s.gripper.x;
        if (x < 0.40 || x > 0.62) return;
        sum += std::min(std::abs(s.gripper.y - 0.88), std::abs(s.gripper.y - 0.12));
        ++n;
    }
    double value() const { return n == 0 ? 0.5 : sum / n; }
};

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double percentile_of(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * (v.size() - 1);
    const size_t lo = static_cast<size_t>(pos);
    const size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - lo) * (v[hi] - v[lo]);
}

}  // namespace

EvalResult evaluate(PolicyModel& model, const std::string& task, int episodes, uint64_t seed_base,
                    const std::string& perturbation) {
    if (episodes < 1) throw std::invalid_argument("evaluate: episodes must be >= 1");
    EvalResult result;
    result.head = head_type_name(model.config().head);
    result.task = task;
    result.perturbation = perturbation.empty() ? "clean" : perturbation;
    result.episodes = episodes;

    const int exec = model.config().exec_horizon;
    ModeTracker modes;
    auto env_cfg = eval_env_config(perturbation);
    env_cfg.image_size = model.config().backbone.image_size;
    for (int ep = 0; ep < episodes; ++ep) {
        SimEnv env(task, env_cfg);
        Observation obs = env.reset(seed_base + static_cast<uint64_t>(ep));
        Rng chunk_rng((seed_base + static_cast<uint64_t>(ep)) ^ 0x51eba9d5a22e4f7dULL);
        bool success = false;
        while (!env.state().done) {
            auto actions = model.predict_chunk(obs, chunk_rng.next_u64());
            for (int h = 0; h < exec && !env.state().done; ++h) {
                auto res = env.step(actions[h]);
                obs = std::move(res.obs);
                modes.observe(env.state());
                if (res.success) success = true;
            }
        }
        result.outcomes.push_back(success);
        if (success) ++result.successes;
    }
    result.success_rate = static_cast<double>(result.successes) / episodes;
    result.mode_distance = modes.value();
    return result;
}

EvalResult evaluate_oracle(const std::string& task, int episodes, uint64_t seed_base,
                           const std::string& perturbation) {
    if (episodes < 1) throw std::invalid_argument("evaluate: episodes must be >= 1");
    EvalResult result;
    result.head = "oracle";
    result.task = task;
    result.perturbation = perturbation.empty() ? "clean" : perturbation;
    result.episodes = episodes;

    ModeTracker modes;
    for (int ep = 0; ep < episodes; ++ep) {
        SimEnv env(task, eval_env_config(perturbation));
        env.reset(seed_base + static_cast<uint64_t>(ep));
        bool success = false;
        while (!env.state().done) {
            auto res = env.step(env.oracle_action());
            modes.observe(env.state());
            if (res.success) success = true;
        }
        result.outcomes.push_back(success);
        if (success) ++result.successes;
    }
    result.success_rate = static_cast<double>(result.successes) / episodes;
    result.mode_distance = modes.value();
    return result;
}

LatencyStats bench_latency(PolicyModel& model, int measurements, int warmups) {
    if (measurements < 100 || warmups < 10) {
        throw std::invalid_argument("bench: need >= 100 measurements and >= 10 warmups");
    }
    if (!model.merged()) {
        throw std::runtime_error("bench: adapters must be merged before timing");
    }
    const auto& cfg = model.config();
    LatencyStats stats;
    stats.head = head_type_name(cfg.head);
    stats.warmups = warmups;
    stats.measurements = measurements;

    // fixed observation; environment/render time stays outside the clock
    EnvConfig env_cfg;
    env_cfg.image_size = cfg.backbone.image_size;
    SimEnv env(task_names()[0], env_cfg);
    Observation obs = env.reset(7);

    using clock = std::chrono::steady_clock;
    std::vector<double> samples_ms;
    samples_ms.reserve(measurements);

    if (cfg.head == HeadType::ar) {
        // measurement unit: one action (kActionDim token passes)
        auto ids = model.backbone().vocab().encode(obs.instruction, cfg.backbone.max_text_len);
        for (int i = 0; i < warmups + measurements; ++i) {
            const auto t0 = clock::now();
            model.ar_head().decode(model.backbone(), obs.images, ids, 1);
            const double ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
            if (i >= warmups) samples_ms.push_back(ms);
        }
        stats.median_ms_per_action = median_of(samples_ms);
        stats.p95_ms_per_action = percentile_of(samples_ms, 0.95);
        stats.median_ms_per_chunk = stats.median_ms_per_action * cfg.horizon;
        stats.p95_ms_per_chunk = stats.p95_ms_per_action * cfg.horizon;
        stats.backbone_passes_per_chunk = static_cast<int64_t>(cfg.horizon) * kActionDim;
        stats.denoiser_passes_per_chunk = 0;
    } else {
        // measurement unit: one chunk; per-action amortizes over exec_horizon
        uint64_t seed = 11;
        for (int i = 0; i < warmups + measurements; ++i) {
            const auto t0 = clock::now();
            model.predict_chunk(obs, seed++);
            const double ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
            if (i >= warmups) samples_ms.push_back(ms);
        }
        stats.median_ms_per_chunk = median_of(samples_ms);
        stats.p95_ms_per_chunk = percentile_of(samples_ms, 0.95);
        stats.median_ms_per_action = stats.median_ms_per_chunk / cfg.exec_horizon;
        stats.p95_ms_per_action = stats.p95_ms_per_chunk / cfg.exec_horizon;
        stats.backbone_passes_per_chunk = 1;
        stats.denoiser_passes_per_chunk = (cfg.head == HeadType::diffusion) ? cfg.diffusion_K : 0;
    }
    stats.forward_passes_per_chunk = stats.backbone_passes_per_chunk + stats.denoiser_passes_per_chunk;
    return stats;
}

LinearFit ar_latency_sweep(PolicyModel& model, const std::vector<int>& horizons,
                           int reps_per_point) {
    if (model.config().head != HeadType::ar) {
        throw std::runtime_error("sweep: requires an autoregressive head");
    }
    if (!model.merged()) throw std::runtime_error("sweep: adapters must be merged before timing");
    EnvConfig env_cfg;
    env_cfg.image_size = model.config().backbone.image_size;
    SimEnv env(task_names()[0], env_cfg);
    Observation obs = env.reset(7);
    auto ids = model.backbone().vocab().encode(obs.instruction,
                                               model.config().backbone.max_text_len);
    using clock = std::chrono::steady_clock;
    model.ar_head().decode(model.backbone(), obs.images, ids, 1);  // warm-up

    LinearFit fit;
    for (int h : horizons) {
        std::vector<double> reps;
        for (int r = 0; r < reps_per_point; ++r) {
            const auto t0 = clock::now();
            model.ar_head().decode(model.backbone(), obs.images, ids, h);
            reps.push_back(std::chrono::duration<double, std::milli>(clock::now() - t0).count());
        }
        fit.xs.push_back(h * kActionDim);
        fit.ys_ms.push_back(median_of(reps));
    }
    const size_t n = fit.xs.size();
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (size_t i = 0; i < n; ++i) {
        sx += fit.xs[i];
        sy += fit.ys_ms[i];
        sxx += static_cast<double>(fit.xs[i]) * fit.xs[i];
        sxy += fit.xs[i] * fit.ys_ms[i];
    }
    const double denom = n * sxx - sx * sx;
    fit.slope = (n * sxy - sx * sy) / denom;
    fit.intercept = (sy - fit.slope * sx) / n;
    double ss_res = 0, ss_tot = 0;
    const double mean_y = sy / n;
    for (size_t i = 0; i < n; ++i) {
        const double pred = fit.slope * fit.xs[i] + fit.intercept;
        ss_res += (fit.ys_ms[i] - pred) * (fit.ys_ms[i] - pred);
        ss_tot += (fit.ys_ms[i] - mean_y) * (fit.ys_ms[i] - mean_y);
    }
    fit.r2 = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 1.0;
    return fit;
}

// ---- report emission ----

namespace {

std::string fmt(double v, int prec = 6) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(prec) << v;
    return os.str();
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) out.push_back(f);
    return out;
}

}  // namespace

std::string result_csv_header() {
    return "head,task,perturbation,episodes,success,params_total,params_trainable,"
           "latency_ms,forward_passes";
}

std::string result_csv_row(const ResultRow& r) {
    std::ostringstream os;
    os << r.head << ',' << r.task << ',' << (r.perturbation.empty() ? "clean" : r.perturbation)
       << ',' << r.episodes << ',' << fmt(r.success) << ',' << r.params_total << ','
       << r.params_trainable << ',' << fmt(r.latency_ms, 4) << ',' << r.forward_passes;
    return os.str();
}

std::vector<ResultRow> load_result_rows(const std::string& csv_path) {
    std::ifstream in(csv_path);
    if (!in) throw std::runtime_error("report: cannot read " + csv_path);
    std::vector<ResultRow> rows;
    std::string line;
    if (!std::getline(in, line)) return rows;
    if (line != result_csv_header()) {
        throw std::runtime_error("report: unexpected header in " + csv_path);
    }
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto f = split_csv(line);
        if (f.size() != 9) throw std::runtime_error("report: malformed row in " + csv_path);
        ResultRow r;
        r.head = f[0];
        r.task = f[1];
        r.perturbation = f[2].empty() ? "clean" : f[2];
        r.episodes = std::stoi(f[3]);
        r.success = std::stod(f[4]);
        r.params_total = std::stoll(f[5]);
        r.params_trainable = std::stoll(f[6]);
        r.latency_ms = std::stod(f[7]);
        r.forward_passes = std::stoll(f[8]);
        rows.push_back(r);
    }
    return rows;
}

void write_report(const std::string& in_dir, const std::string& out_dir) {
    namespace fs = std::filesystem;
    std::vector<std::string> inputs;
    for (const auto& e : fs::directory_iterator(in_dir)) {
        if (e.path().extension() == ".csv") inputs.push_back(e.path().string());
    }
    std::sort(inputs.begin(), inputs.end());
    std::vector<ResultRow> rows;
    for (const auto& p : inputs) {
        auto part = load_result_rows(p);
        rows.insert(rows.end(), part.begin(), part.end());
    }
    if (rows.empty()) throw std::runtime_error("report: no result rows under " + in_dir);

    struct Agg {
        std::vector<double> success;
        int episodes = 0;
        int64_t params_total = 0, params_trainable = 0, forward_passes = 0;
        double latency_sum = 0.0;
    };
    std::map<std::tuple<std::string, std::string, std::string>, Agg> groups;
    for (const auto& r : rows) {
        auto& g = groups[{r.head, r.task, r.perturbation}];
        g.success.push_back(r.success);
        g.episodes += r.episodes;
        g.params_total = r.params_total;
        g.params_trainable = r.params_trainable;
        g.forward_passes = r.forward_passes;
        g.latency_sum += r.latency_ms;
    }

    fs::create_directories(out_dir);
    std::ofstream results(fs::path(out_dir) / "results.csv", std::ios::binary);
    results << "head,task,perturbation,runs,episodes,success_mean,success_std,params_total,"
               "params_trainable,latency_ms,forward_passes\n";
    std::ofstream plot(fs::path(out_dir) / "plot_data.csv", std::ios::binary);
    plot << "head,task,perturbation,latency_ms,success_mean,params_trainable\n";

    struct Line {
        std::array<std::string, 8> cells;
    };
    std::vector<Line> table;
    table.push_back({{"head", "task", "perturbation", "runs", "success", "std", "latency_ms",
                      "fwd_passes"}});
    for (const auto& [key, g] : groups) {
        const auto& [head, task, pert] = key;
        const size_t n = g.success.size();
        double mean = 0.0;
        for (double s : g.success) mean += s;
        mean /= n;
        double var = 0.0;
        for (double s : g.success) var += (s - mean) * (s - mean);
        const double stddev = n > 1 ? std::sqrt(var / (n - 1)) : 0.0;
        const double lat = g.latency_sum / n;
        results << head << ',' << task << ',' << pert << ',' << n << ',' << g.episodes << ','
                << fmt(mean) << ',' << fmt(stddev) << ',' << g.params_total << ','
                << g.params_trainable << ',' << fmt(lat, 4) << ',' << g.forward_passes << '\n';
        plot << head << ',' << task << ',' << pert << ',' << fmt(lat, 4) << ',' << fmt(mean)
             << ',' << g.params_trainable << '\n';
        table.push_back({{head, task, pert, std::to_string(n), fmt(mean, 3), fmt(stddev, 3),
                          fmt(lat, 2), std::to_string(g.forward_passes)}});
    }

    std::array<size_t, 8> width{};
    for (const auto& line : table) {
        for (size_t c = 0; c < 8; ++c) width[c] = std::max(width[c], line.cells[c].size());
    }
    std::ofstream summary(fs::path(out_dir) / "summary.txt", std::ios::binary);
    for (const auto& line : table) {
        for (size_t c = 0; c < 8; ++c) {
            summary << std::left << std::setw(static_cast<int>(width[c])) << line.cells[c];
            summary << (c + 1 < 8 ? "  " : "");
        }
        summary << '\n';
    }
}

}  // namespace vla
