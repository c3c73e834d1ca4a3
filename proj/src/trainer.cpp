#include "vla/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

namespace vla {

void TrainConfig::validate() const {
    model.validate();
    if (steps < 0 || batch_size < 1) throw std::invalid_argument("train config: bad steps/batch");
    if (diffusion_draws < 1) throw std::invalid_argument("train config: diffusion_draws must be >= 1");
    if (lr_head <= 0.0 || lr_lora <= 0.0) throw std::invalid_argument("train config: bad learning rate");
    if (datasets.empty()) throw std::invalid_argument("train config: no datasets");
}

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace

TrainConfig load_train_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot read " + path);
    TrainConfig cfg;
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        if (line.front() == '[' && line.back() == ']') {
            section = line.substr(1, line.size() - 2);
            if (section != "model" && section != "train" && section != "data") {
                throw std::runtime_error("config: unknown section [" + section + "]");
            }
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("config: bad line " + std::to_string(lineno));
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        auto fail = [&]() -> void {
            throw std::runtime_error("config: unknown key '" + key + "' in [" + section + "]");
        };
        if (section == "model") {
            auto& m = cfg.model;
            if (key == "d_model") m.backbone.d_model = std::stoi(val);
            else if (key == "num_layers") m.backbone.num_layers = std::stoi(val);
            else if (key == "num_heads") m.backbone.num_heads = std::stoi(val);
            else if (key == "patch_size") m.backbone.patch_size = std::stoi(val);
            else if (key == "image_size") m.backbone.image_size = std::stoi(val);
            else if (key == "max_text_len") m.backbone.max_text_len = std::stoi(val);
            else if (key == "num_cameras") m.backbone.num_cameras = std::stoi(val);
            else if (key == "ffn_hidden") m.backbone.ffn_hidden = std::stoi(val);
            else if (key == "pooled_tokens") m.pooled_tokens = std::stoi(val);
            else if (key == "cond_width") m.cond_width = std::stoi(val);
            else if (key == "horizon") m.horizon = std::stoi(val);
            else if (key == "exec_horizon") m.exec_horizon = std::stoi(val);
            else if (key == "diffusion_T") m.diffusion_T = std::stoi(val);
            else if (key == "diffusion_K") m.diffusion_K = std::stoi(val);
            else if (key == "denoiser_hidden") m.denoiser_hidden = std::stoi(val);
            else if (key == "time_embed_dim") m.time_embed_dim = std::stoi(val);
            else if (key == "mlp_hidden") m.mlp_hidden = std::stoi(val);
            else if (key == "lora_rank") m.lora_rank = (val == "auto") ? 0 : std::stoi(val);
            else if (key == "lora_alpha") m.lora_alpha = std::stod(val);
            else if (key == "head") m.head = head_type_from_name(val);
            else if (key == "ar_bins") m.ar_bins = std::stoi(val);
            else if (key == "init_seed") m.init_seed = std::stoull(val);
            else fail();
        } else if (section == "train") {
            if (key == "steps") cfg.steps = std::stoi(val);
            else if (key == "batch_size") cfg.batch_size = std::stoi(val);
            else if (key == "diffusion_draws") cfg.diffusion_draws = std::stoi(val);
            else if (key == "lr_head") cfg.lr_head = std::stod(val);
            else if (key == "lr_lora") cfg.lr_lora = std::stod(val);
            else if (key == "seed") cfg.seed = std::stoull(val);
            else if (key == "out_checkpoint") cfg.out_checkpoint = val;
            else if (key == "checkpoint_every") cfg.checkpoint_every = std::stoi(val);
            else if (key == "log_file") cfg.log_file = val;
            else fail();
        } else if (section == "data") {
            if (key == "datasets") {
                cfg.datasets.clear();
                std::istringstream ss(val);
                std::string item;
                while (std::getline(ss, item, ',')) {
                    item = trim(item);
                    if (!item.empty()) cfg.datasets.push_back(item);
                }
            } else {
                fail();
            }
        } else {
            throw std::runtime_error("config: key '" + key + "' outside any section");
        }
    }
    cfg.validate();
    return cfg;
}

std::string serialize_train_config(const TrainConfig& cfg) {
    std::ostringstream os;
    os << "[model]\n" << serialize_model_config(cfg.model);
    os << "[train]\nsteps=" << cfg.steps << "\nbatch_size=" << cfg.batch_size
       << "\ndiffusion_draws=" << cfg.diffusion_draws
       << "\nlr_head=" << cfg.lr_head << "\nlr_lora=" << cfg.lr_lora << "\nseed=" << cfg.seed
       << "\nout_checkpoint=" << cfg.out_checkpoint << "\n[data]\ndatasets=";
    for (size_t i = 0; i < cfg.datasets.size(); ++i) {
        if (i) os << ",";
        os << cfg.datasets[i];
    }
    os << "\n";
    return os.str();
}

namespace {

// one sampled supervision window
struct Sample {
    const Demonstration* demo;
    int start;
};

std::vector<Image> to_images(const DemoStep& step) {
    std::vector<Image> images;
    for (const auto& q : step.images) {
        Image img(q.size());
        for (size_t i = 0; i < q.size(); ++i) img[i] = q[i] / 255.0;
        images.push_back(std::move(img));
    }
    return images;
}

std::vector<double> chunk_targets(const Demonstration& demo, int start, int horizon,
                                  const NormStats& stats) {
    std::vector<double> out;
    out.reserve(static_cast<size_t>(horizon) * kActionDim);
    const int n = static_cast<int>(demo.steps.size());
    for (int h = 0; h < horizon; ++h) {
        const int idx = std::min(start + h, n - 1);  // pad by repeating the last action
        auto norm = stats.normalize(demo.steps[idx].action);
        out.insert(out.end(), norm.begin(), norm.end());
    }
    return out;
}

}  // namespace

TrainResult train_on(const TrainConfig& cfg, const std::vector<std::vector<Demonstration>>& tasks,
                     std::ostream* log, const std::string& resume_from) {
    cfg.validate();
    for (const auto& t : tasks) {
        if (t.empty()) throw std::invalid_argument("train: empty task dataset");
    }

    // normalization statistics from the full training set
    std::vector<std::vector<double>> action_rows, proprio_rows;
    for (const auto& task : tasks) {
        for (const auto& d : task) {
            for (const auto& s : d.steps) {
                action_rows.push_back(s.action);
                proprio_rows.push_back(s.proprio);
            }
        }
    }

    std::unique_ptr<PolicyModel> model;
    if (!resume_from.empty()) {
        model = load_checkpoint(resume_from, /*merge=*/false, /*verify_merge=*/false);
    } else {
        std::vector<std::string> corpus = instruction_corpus();
        model = std::make_unique<PolicyModel>(cfg.model, Vocabulary::build(corpus));
    }
    model->action_stats = NormStats::fit(action_rows);
    model->proprio_stats = NormStats::fit(proprio_rows);
    model->stats_ready = true;

    TrainResult result;
    result.frozen_hash_before = frozen_weight_hash(*model);

    Adam opt_lora(model->lora_parameters(), {cfg.lr_lora, 0.9, 0.999, 1e-8});
    Adam opt_head(model->head_parameters(), {cfg.lr_head, 0.9, 0.999, 1e-8});

    const int horizon = cfg.model.horizon;
    Rng rng(cfg.seed);
    result.task_sample_counts.assign(tasks.size(), 0);

    std::vector<double> losses;
    losses.reserve(cfg.steps);
    const auto t0 = std::chrono::steady_clock::now();
    ActionTokenizer tokenizer(cfg.model.ar_bins);

    for (int step = 0; step < cfg.steps; ++step) {
        opt_lora.zero_grad();
        opt_head.zero_grad();
        double step_loss = 0.0;
        const uint64_t batch_seed = rng.next_u64();
        Rng batch_rng(batch_seed);
        try {
            for (int b = 0; b < cfg.batch_size; ++b) {
                const int ti = batch_rng.uniform_int(static_cast<int>(tasks.size()));
                ++result.task_sample_counts[ti];
                const auto& demos = tasks[ti];
                const auto& demo = demos[batch_rng.uniform_int(static_cast<int>(demos.size()))];
                const int start = batch_rng.uniform_int(static_cast<int>(demo.steps.size()));
                const auto& dstep = demo.steps[start];

                Observation obs;
                obs.images = to_images(dstep);
                obs.proprio = dstep.proprio;
                obs.instruction = demo.instruction;

                auto targets = chunk_targets(demo, start, horizon, model->action_stats);
                TensorPtr loss;
                if (cfg.model.head == HeadType::diffusion) {
                    auto cond = model->condition_observation(obs);
                    loss = diffusion_sample_loss(model->denoiser(), cond, targets,
                                                 model->schedule(), batch_rng);
                    for (int d = 1; d < cfg.diffusion_draws; ++d) {
                        loss = add(loss, diffusion_sample_loss(model->denoiser(), cond, targets,
                                                               model->schedule(), batch_rng));
                    }
                    loss = mul_scalar(loss, 1.0 / cfg.diffusion_draws);
                } else if (cfg.model.head == HeadType::mlp) {
                    auto cond = model->condition_observation(obs);
                    auto pred = model->mlp_head().forward(cond);
                    loss = mse_loss(pred, Tensor::from_data({1, horizon * kActionDim}, targets));
                } else {
                    auto ids = model->backbone().vocab().encode(obs.instruction,
                                                                cfg.model.backbone.max_text_len);
                    auto tokens = tokenizer.discretize_all(targets);
                    loss = model->ar_head().training_loss(model->backbone(), obs.images, ids,
                                                          tokens);
                }
                step_loss += loss->scalar();
                backward(mul_scalar(loss, 1.0 / cfg.batch_size));
            }
        } catch (const std::exception& e) {
            throw std::runtime_error("train: aborted at step " + std::to_string(step) +
                                     " (batch seed " + std::to_string(batch_seed) +
                                     "): " + e.what());
        }
        step_loss /= cfg.batch_size;
        if (!std::isfinite(step_loss)) {
            throw std::runtime_error("train: NaN loss at step " + std::to_string(step) +
                                     " (batch seed " + std::to_string(batch_seed) + ")");
        }
        losses.push_back(step_loss);
        opt_lora.step();
        opt_head.step();

        if (log && (step % 50 == 0 || step + 1 == cfg.steps)) {
            const double wall =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            (*log) << "step " << step << " loss " << step_loss << " wall_s " << wall << "\n";
            log->flush();
        }
        if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
            step + 1 < cfg.steps) {
            save_checkpoint(*model, cfg.out_checkpoint + "." + std::to_string(step + 1));
        }
    }

    if (cfg.model.head == HeadType::ar && cfg.steps > 0) model->ar_head().mark_trained();

    const int decile = std::max(1, cfg.steps / 10);
    if (!losses.empty()) {
        double first = 0.0, last = 0.0;
        for (int i = 0; i < decile && i < static_cast<int>(losses.size()); ++i) first += losses[i];
        for (int i = std::max(0, static_cast<int>(losses.size()) - decile);
             i < static_cast<int>(losses.size()); ++i)
            last += losses[i];
        result.first_decile_loss = first / decile;
        result.last_decile_loss = last / decile;
    }
    result.frozen_hash_after = frozen_weight_hash(*model);

    save_checkpoint(*model, cfg.out_checkpoint);
    result.checkpoint_path = cfg.out_checkpoint;

    if (log) {
        const auto counts = model->count_parameters();
        (*log) << "params total " << counts.total << " trainable " << counts.trainable
               << " lora_rank " << model->lora_rank() << " transformer_fraction "
               << model->transformer_trainable_fraction() << "\n";
    }
    return result;
}

TrainResult train(const TrainConfig& cfg, std::ostream* log, const std::string& resume_from) {
    std::vector<std::vector<Demonstration>> tasks;
    for (const auto& path : cfg.datasets) tasks.push_back(load_demos(path));
    std::ofstream log_file;
    std::ostream* sink = log;
    if (!cfg.log_file.empty()) {
        log_file.open(cfg.log_file);
        sink = &log_file;
    }
    return train_on(cfg, tasks, sink, resume_from);
}

}  // namespace vla
