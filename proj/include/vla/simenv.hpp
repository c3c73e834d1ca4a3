#pragma once

#include <array>
#include <string>
#include <vector>

#include "vla/backbone.hpp"  // Image
#include "vla/rng.hpp"

namespace vla {

// 2-D top-down manipulation world, workspace [0,1]^2, y up. z in [0,1]
// drives grasp height for the mug-flip task and passes through otherwise.

struct GripperPose {
    double x = 0.5, y = 0.15, z = 0.8;
    double roll = 0.0, pitch = 0.0, yaw = 0.0;
    double width = 1.0;  // 0 closed, 1 open
};

struct SimObject {
    std::string shape;  // circle | square | diamond | drawer | mug | bin
    std::string color;  // name, mapped to rgb at render time
    double x = 0.5, y = 0.5;
    double aux = 0.0;  // drawer openness / mug flip progress
};

struct WorldState {
    GripperPose gripper;
    std::vector<SimObject> objects;
    std::string task;
    int step = 0;
    bool done = false;
    bool success = false;
    int held_object = -1;
};

struct EnvConfig {
    std::array<double, 3> background = {0.12, 0.12, 0.14};
    double illumination = 1.0;
    double view_shift_deg = 0.0;
    int num_distractors = 0;
    bool distractors_same_shape = false;  // L2: task-object shape, other colors
    double oracle_jitter = 0.03;
    int image_size = 32;
    int episode_cap = 200;
};

// distractor_L1 | distractor_L2 | background | illumination | view_shift
EnvConfig perturb(const EnvConfig& cfg, const std::string& kind, double view_angle_deg = 30.0);
const std::vector<std::string>& perturbation_kinds();

struct Observation {
    std::vector<Image> images;       // per camera, pixels in [0,1]
    std::vector<double> proprio;     // 7: x,y,z,roll,pitch,yaw,width
    std::string instruction;
};

struct StepResult {
    Observation obs;
    bool success = false;
    bool done = false;
};

const std::vector<std::string>& task_names();
std::string task_instruction(const std::string& task);
// Every instruction template (the tokenizer corpus).
std::vector<std::string> instruction_corpus();

class SimEnv {
public:
    SimEnv(std::string task, EnvConfig cfg = {});

    Observation reset(uint64_t seed);
    StepResult step(const std::vector<double>& action);
    // Scripted controller for the current state (demonstration oracle).
    std::vector<double> oracle_action() const;

    const WorldState& state() const { return state_; }
    const EnvConfig& config() const { return cfg_; }
    Observation observe() const;
    std::vector<std::vector<int>> render_quantized() const;  // per camera, ints 0..255

    static constexpr int kNumCameras = 2;
    static constexpr double kMaxDelta = 0.08;
    static constexpr double kGraspRadius = 0.10;

private:
    Image render(int camera) const;
    std::array<double, 3> scene_color(double wx, double wy) const;
    bool check_success() const;

    std::string task_;
    EnvConfig cfg_;
    WorldState state_;
    // per-episode oracle context
    double jitter_dx_ = 0.0, jitter_dy_ = 0.0;
    int arc_mode_ = 0;  // stack_cubes: 0 left arc, 1 right arc
    bool fumble_ = false;        // grasp-fumble recovery demonstration
    double fumble_dist_ = 0.0;   // distance band where the fumble happens
    double fumble_width_ = 0.0;  // width held during the fumble
    bool overshoot_ = false;     // detour approach from a random side
    double detour_ang_ = 0.0;    // angle of the detour point around the object
    bool was_reset_ = false;

public:
    int arc_mode() const { return arc_mode_; }
};

}  // namespace vla
