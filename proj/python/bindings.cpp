#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "vla/dataset.hpp"
#include "vla/eval.hpp"
#include "vla/model.hpp"
#include "vla/trainer.hpp"

namespace py = pybind11;
using namespace vla;

namespace {

py::dict obs_to_dict(const Observation& obs) {
    py::dict d;
    d["images"] = obs.images;
    d["proprio"] = obs.proprio;
    d["instruction"] = obs.instruction;
    return d;
}

// load_checkpoint returns unique_ptr<PolicyModel>; wrap the pieces python
// callers need without exposing the full graph machinery
class Policy {
public:
    Policy(const std::string& path, bool merge)
        : model_(load_checkpoint(path, merge)) {}

    std::string head() const { return head_type_name(model_->config().head); }
    int lora_rank() const { return model_->lora_rank(); }
    double trainable_fraction() const { return model_->transformer_trainable_fraction(); }
    bool merged() const { return model_->merged(); }

    std::vector<std::vector<double>> predict(const py::dict& obs, uint64_t seed) {
        Observation o;
        o.images = obs["images"].cast<std::vector<Image>>();
        o.proprio = obs["proprio"].cast<std::vector<double>>();
        o.instruction = obs["instruction"].cast<std::string>();
        return model_->predict_chunk(o, seed);
    }

    py::dict evaluate_task(const std::string& task, int episodes, uint64_t seed_base,
                           const std::string& perturbation) {
        auto r = evaluate(*model_, task, episodes, seed_base, perturbation);
        py::dict d;
        d["task"] = r.task;
        d["perturbation"] = r.perturbation;
        d["episodes"] = r.episodes;
        d["successes"] = r.successes;
        d["success_rate"] = r.success_rate;
        d["mode_distance"] = r.mode_distance;
        d["outcomes"] = r.outcomes;
        return d;
    }

    py::dict bench(int measurements, int warmups) {
        auto s = bench_latency(*model_, measurements, warmups);
        py::dict d;
        d["median_ms_per_action"] = s.median_ms_per_action;
        d["p95_ms_per_action"] = s.p95_ms_per_action;
        d["median_ms_per_chunk"] = s.median_ms_per_chunk;
        d["backbone_passes_per_chunk"] = s.backbone_passes_per_chunk;
        d["denoiser_passes_per_chunk"] = s.denoiser_passes_per_chunk;
        d["forward_passes_per_chunk"] = s.forward_passes_per_chunk;
        return d;
    }

private:
    std::unique_ptr<PolicyModel> model_;
};

}  // namespace

PYBIND11_MODULE(_tinyvla, m) {
    m.doc() = "Toy vision-language-action benchmark bindings";

    m.def("task_names", [] { return task_names(); });
    m.def("perturbation_kinds", [] { return perturbation_kinds(); });
    m.def("instruction_corpus", &instruction_corpus);
    m.def("task_instruction", &task_instruction);

    py::class_<SimEnv>(m, "SimEnv")
        .def(py::init([](const std::string& task, const std::string& perturbation) {
                 EnvConfig cfg;
                 if (!perturbation.empty()) cfg = perturb(cfg, perturbation);
                 return new SimEnv(task, cfg);
             }),
             py::arg("task"), py::arg("perturbation") = "")
        .def("reset", [](SimEnv& env, uint64_t seed) { return obs_to_dict(env.reset(seed)); })
        .def("step",
             [](SimEnv& env, const std::vector<double>& action) {
                 auto r = env.step(action);
                 py::dict d;
                 d["obs"] = obs_to_dict(r.obs);
                 d["success"] = r.success;
                 d["done"] = r.done;
                 return d;
             })
        .def("oracle_action", &SimEnv::oracle_action)
        .def_property_readonly("done", [](const SimEnv& env) { return env.state().done; })
        .def_property_readonly("success", [](const SimEnv& env) { return env.state().success; })
        .def_property_readonly("steps", [](const SimEnv& env) { return env.state().step; });

    m.def(
        "generate_demos",
        [](const std::string& task, int n, uint64_t seed, const std::string& out) {
            auto s = generate_demos(task, n, seed, out);
            return py::make_tuple(s.written, s.regenerated);
        },
        py::arg("task"), py::arg("n"), py::arg("seed"), py::arg("out"));

    m.def("squared_cosine_schedule", [](int T) {
        auto s = NoiseSchedule::squared_cosine(T);
        py::dict d;
        d["beta"] = s.beta;
        d["alpha"] = s.alpha;
        d["alpha_bar"] = s.alpha_bar;
        return d;
    });
    m.def("q_sample", [](const std::vector<double>& a0, int t, const std::vector<double>& eps,
                         int T) { return q_sample(a0, t, eps, NoiseSchedule::squared_cosine(T)); });
    m.def("reconstruct_a0",
          [](const std::vector<double>& a_t, int t, const std::vector<double>& eps, int T) {
              return reconstruct_a0(a_t, t, eps, NoiseSchedule::squared_cosine(T));
          });

    m.def(
        "train",
        [](const std::string& config_path, const std::string& resume) {
            auto cfg = load_train_config(config_path);
            auto r = train(cfg, nullptr, resume);
            py::dict d;
            d["checkpoint"] = r.checkpoint_path;
            d["first_decile_loss"] = r.first_decile_loss;
            d["last_decile_loss"] = r.last_decile_loss;
            d["frozen_unchanged"] = r.frozen_hash_before == r.frozen_hash_after;
            return d;
        },
        py::arg("config_path"), py::arg("resume") = "");

    m.def("write_report", &write_report, py::arg("in_dir"), py::arg("out_dir"));

    py::class_<Policy>(m, "Policy")
        .def(py::init<const std::string&, bool>(), py::arg("path"), py::arg("merge") = true)
        .def_property_readonly("head", &Policy::head)
        .def_property_readonly("lora_rank", &Policy::lora_rank)
        .def_property_readonly("trainable_fraction", &Policy::trainable_fraction)
        .def_property_readonly("merged", &Policy::merged)
        .def("predict", &Policy::predict, py::arg("obs"), py::arg("seed") = 0)
        .def("evaluate", &Policy::evaluate_task, py::arg("task"), py::arg("episodes") = 50,
             py::arg("seed_base") = 1000000, py::arg("perturbation") = "")
        .def("bench_latency", &Policy::bench, py::arg("measurements") = 100,
             py::arg("warmups") = 10);
}
