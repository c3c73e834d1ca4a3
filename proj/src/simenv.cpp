#include "vla/simenv.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vla {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::array<double, 3> color_rgb(const std::string& name) {
    if (name == "red") return {0.90, 0.15, 0.15};
    if (name == "pink") return {1.00, 0.45, 0.75};
    if (name == "blue") return {0.20, 0.35, 0.95};
    if (name == "green") return {0.20, 0.80, 0.30};
    if (name == "yellow") return {0.95, 0.85, 0.20};
    if (name == "orange") return {0.95, 0.55, 0.15};
    if (name == "purple") return {0.60, 0.25, 0.85};
    if (name == "cyan") return {0.20, 0.85, 0.85};
    if (name == "gray") return {0.55, 0.55, 0.55};
    if (name == "darkblue") return {0.10, 0.15, 0.45};
    throw std::invalid_argument("unknown color " + name);
}

struct Camera {
    double cx, cy, zoom, rot_deg;
};

// camera 0: fixed overhead view of the whole workspace; camera 1: wrist view
// that follows the gripper, so object offsets from the gripper appear at
// fixed pixel positions regardless of where the arm is
Camera camera_spec(int idx, double view_shift_deg, double gx, double gy) {
    if (idx == 0) return {0.5, 0.5, 1.0, view_shift_deg};
    return {gx, gy, 2.0, 10.0 + view_shift_deg};
}

double dist2d(double ax, double ay, double bx, double by) {
    return std::hypot(ax - bx, ay - by);
}

// fixed goal positions
constexpr double kBinX = 0.80, kBinY = 0.50;
constexpr double kDrawerTopY = 0.90;

// stack_cubes wall: blocks the direct path between the cubes, forcing the
// demonstrations into an upper or lower lane (bimodal distribution)
constexpr double kWallX0 = 0.44, kWallX1 = 0.56;
constexpr double kWallY0 = 0.22, kWallY1 = 0.78;
constexpr double kLaneHigh = 0.88, kLaneLow = 0.12;

bool in_wall(double x, double y) {
    return x > kWallX0 && x < kWallX1 && y > kWallY0 && y < kWallY1;
}

}  // namespace

const std::vector<std::string>& task_names() {
    static const std::vector<std::string> names = {"place_ball", "stack_cubes", "close_drawer",
                                                   "flip_mug_2d"};
    return names;
}

std::string task_instruction(const std::string& task) {
    if (task == "place_ball") return "place the red ball into the blue bin";
    if (task == "stack_cubes") return "stack the pink cube on the blue cube";
    if (task == "close_drawer") return "close the gray drawer";
    if (task == "flip_mug_2d") return "flip the green mug upright";
    throw std::invalid_argument("unknown task " + task);
}

std::vector<std::string> instruction_corpus() {
    std::vector<std::string> corpus;
    for (const auto& t : task_names()) corpus.push_back(task_instruction(t));
    return corpus;
}

const std::vector<std::string>& perturbation_kinds() {
    static const std::vector<std::string> kinds = {"distractor_L1", "distractor_L2", "background",
                                                   "illumination", "view_shift"};
    return kinds;
}

EnvConfig perturb(const EnvConfig& cfg, const std::string& kind, double view_angle_deg) {
    EnvConfig out = cfg;
    if (kind == "distractor_L1") {
        out.num_distractors = 2;
        out.distractors_same_shape = false;
    } else if (kind == "distractor_L2") {
        out.num_distractors = 2;
        out.distractors_same_shape = true;
    } else if (kind == "background") {
        out.background = {0.35, 0.30, 0.22};
    } else if (kind == "illumination") {
        out.illumination = 0.5;
    } else if (kind == "view_shift") {
        out.view_shift_deg = view_angle_deg;
    } else {
        throw std::invalid_argument("unknown perturbation kind " + kind);
    }
    return out;
}

SimEnv::SimEnv(std::string task, EnvConfig cfg) : task_(std::move(task)), cfg_(cfg) {
    if (std::find(task_names().begin(), task_names().end(), task_) == task_names().end()) {
        throw std::invalid_argument("unknown task id " + task_);
    }
}

Observation SimEnv::reset(uint64_t seed) {
    Rng rng(seed ^ 0x51c3a9f0d2e17b4dULL);
    state_ = WorldState{};
    state_.task = task_;
    state_.gripper = GripperPose{};
    state_.gripper.x = 0.5 + rng.uniform(-0.02, 0.02);
    state_.gripper.y = 0.15 + rng.uniform(-0.02, 0.02);

    state_.objects.clear();
    if (task_ == "place_ball") {
        state_.objects.push_back({"circle", "red", rng.uniform(0.15, 0.40), rng.uniform(0.30, 0.70), 0.0});
        state_.objects.push_back({"bin", "darkblue", kBinX, kBinY, 0.0});
    } else if (task_ == "stack_cubes") {
        state_.objects.push_back({"square", "pink", rng.uniform(0.15, 0.38), rng.uniform(0.32, 0.68), 0.0});
        state_.objects.push_back({"square", "blue", rng.uniform(0.62, 0.85), rng.uniform(0.32, 0.68), 0.0});
    } else if (task_ == "close_drawer") {
        state_.objects.push_back({"drawer", "gray", rng.uniform(0.35, 0.65), kDrawerTopY,
                                  rng.uniform(0.25, 0.42)});
    } else {  // flip_mug_2d
        state_.objects.push_back({"mug", "green", rng.uniform(0.30, 0.70), rng.uniform(0.28, 0.58), 0.0});
    }

    // render-only distractors
    if (cfg_.num_distractors > 0) {
        static const std::vector<std::string> alt_colors = {"yellow", "orange", "purple", "cyan"};
        const std::string task_shape = state_.objects[0].shape;
        for (int i = 0; i < cfg_.num_distractors; ++i) {
            SimObject d;
            d.shape = cfg_.distractors_same_shape ? task_shape : "diamond";
            d.color = alt_colors[static_cast<size_t>(i) % alt_colors.size()];
            d.x = rng.uniform(0.1, 0.9);
            d.y = rng.uniform(0.05, 0.14);  // low band, outside spawn/goal regions
            state_.objects.push_back(d);
        }
    }

    const double ang = rng.uniform(0.0, 2.0 * kPi);
    jitter_dx_ = cfg_.oracle_jitter * std::cos(ang);
    jitter_dy_ = cfg_.oracle_jitter * std::sin(ang);
    arc_mode_ = rng.uniform() < 0.5 ? 0 : 1;
    // most demonstrations fumble the grasp (close early at some distance, or
    // overshoot past the object and double back) so the data covers
    // closed-but-empty and passed-the-target states with the corrective
    // action; disabled along with jitter for reproducible-trajectory configs
    fumble_ = cfg_.oracle_jitter > 0.0 && rng.uniform() < 0.7;
    fumble_dist_ = rng.uniform(0.20, 0.45);
    fumble_width_ = rng.uniform(0.0, 0.35);
    overshoot_ = fumble_ && rng.uniform() < 0.5;
    detour_ang_ = rng.uniform(0.0, 2.0 * kPi);
    was_reset_ = true;
    return observe();
}

bool SimEnv::check_success() const {
    const auto& objs = state_.objects;
    if (task_ == "place_ball") {
        return dist2d(objs[0].x, objs[0].y, kBinX, kBinY) < 0.08;
    }
    if (task_ == "stack_cubes") {
        return dist2d(objs[0].x, objs[0].y, objs[1].x, objs[1].y) < 0.07;
    }
    if (task_ == "close_drawer") {
        return objs[0].aux < 0.06;
    }
    return objs[0].aux >= 0.9;  // flip_mug_2d
}

StepResult SimEnv::step(const std::vector<double>& action) {
    if (!was_reset_) throw std::runtime_error("step: environment not reset");
    if (state_.done) throw std::runtime_error("step: episode already done");
    if (action.size() != 7) throw std::invalid_argument("step: action must have 7 components");

    auto& g = state_.gripper;
    const double dx = std::clamp(action[0], -kMaxDelta, kMaxDelta);
    const double dy = std::clamp(action[1], -kMaxDelta, kMaxDelta);
    const double dz = std::clamp(action[2], -kMaxDelta, kMaxDelta);
    const double prev_width = g.width;

    const double old_x = g.x, old_y = g.y;
    g.x = std::clamp(g.x + dx, 0.0, 1.0);
    g.y = std::clamp(g.y + dy, 0.0, 1.0);
    if (task_ == "stack_cubes") {
        const double mid_x = 0.5 * (old_x + g.x), mid_y = 0.5 * (old_y + g.y);
        if (in_wall(g.x, g.y) || in_wall(mid_x, mid_y)) {
            g.x = old_x;  // wall blocks the move
            g.y = old_y;
        }
    }
    g.z = std::clamp(g.z + dz, 0.0, 1.0);
    g.roll = std::clamp(g.roll + std::clamp(action[3], -0.2, 0.2), -kPi, kPi);
    g.pitch = std::clamp(g.pitch + std::clamp(action[4], -0.2, 0.2), -kPi, kPi);
    g.yaw = std::clamp(g.yaw + std::clamp(action[5], -0.2, 0.2), -kPi, kPi);
    g.width = std::clamp(action[6], 0.0, 1.0);

    // grasp engagement on width crossing 0.5 within grasp radius
    const bool closed_now = prev_width >= 0.5 && g.width < 0.5;
    const bool opened_now = prev_width < 0.5 && g.width >= 0.5;
    if (state_.held_object < 0 && closed_now) {
        for (size_t i = 0; i < state_.objects.size(); ++i) {
            auto& o = state_.objects[i];
            const bool graspable = (task_ == "place_ball" && o.shape == "circle" && i == 0) ||
                                   (task_ == "stack_cubes" && i == 0) ||
                                   (task_ == "flip_mug_2d" && o.shape == "mug");
            if (!graspable) continue;
            if (o.shape == "mug" && g.z >= 0.35) continue;  // must reach down into the mug
            if (dist2d(g.x, g.y, o.x, o.y) < kGraspRadius) {
                state_.held_object = static_cast<int>(i);
                break;
            }
        }
    } else if (state_.held_object >= 0 && opened_now) {
        state_.held_object = -1;
    }
    if (state_.held_object >= 0) {
        auto& o = state_.objects[state_.held_object];
        o.x = g.x;
        o.y = g.y;
        if (o.shape == "mug" && dz > 0.0) {
            o.aux = std::clamp(o.aux + 2.5 * dz, 0.0, 1.0);  // raising flips the mug upright
        }
    }
    if (task_ == "close_drawer") {
        auto& d = state_.objects[0];
        const double handle_y = kDrawerTopY - d.aux;
        if (dist2d(g.x - dx, g.y - dy, d.x, handle_y) < 0.09 && dy > 0.0) {
            d.aux = std::max(0.0, d.aux - dy);  // push the tray shut
        }
    }

    ++state_.step;
    state_.success = check_success();
    state_.done = state_.success || state_.step >= cfg_.episode_cap;
    return {observe(), state_.success, state_.done};
}

std::vector<double> SimEnv::oracle_action() const {
    const auto& g = state_.gripper;
    const auto& objs = state_.objects;
    double tx = g.x, ty = g.y, tz = g.z, width = g.width;
    // slow relative to the 8-step replanning window so each phase (approach,
    // grasp, carry) spans several chunks and grasping stays closed-loop
    const double speed = 0.02;

    auto approach = [&](double ox, double oy) {
        tx = ox;
        ty = oy;
    };
    // close gradually with distance so demonstrated widths are a smooth
    // function of the visible state; the 0.5 crossing lands near dist 0.08,
    // inside the grasp radius
    auto grasp_width = [&](double dist) {
        if (fumble_ && !overshoot_ && std::abs(dist - fumble_dist_) < 0.06) {
            return fumble_width_;  // premature close at distance, then reopen
        }
        return std::clamp((dist - 0.02) / 0.12, 0.0, 1.0);
    };

    if (task_ == "place_ball") {
        const auto& ball = objs[0];
        if (state_.held_object < 0) {
            approach(ball.x, ball.y);
            width = grasp_width(dist2d(g.x, g.y, ball.x, ball.y));
            if (overshoot_ && dist2d(g.x, g.y, ball.x, ball.y) > 0.24) {
                // detour: route the approach through a point at a random angle
                // beside/behind the ball so demos close in from every side
                approach(std::clamp(ball.x + 0.20 * std::cos(detour_ang_), 0.03, 0.97),
                         std::clamp(ball.y + 0.20 * std::sin(detour_ang_), 0.03, 0.97));
            }
        } else {
            if (dist2d(g.x, g.y, kBinX, kBinY) > 0.25) {
                approach(kBinX + jitter_dx_, kBinY + jitter_dy_);
            } else {
                approach(kBinX, kBinY);
            }
            width = 0.0;
        }
    } else if (task_ == "stack_cubes") {
        const auto& pink = objs[0];
        const auto& blue = objs[1];
        if (state_.held_object < 0) {
            if (g.x > kWallX0 - 0.05 && pink.x < g.x) {
                // duck below the wall before heading left to the cube
                if (g.y > kWallY0 - 0.06) {
                    approach(g.x, kWallY0 - 0.10);
                } else {
                    approach(kWallX0 - 0.10, g.y);
                }
            } else {
                approach(pink.x, pink.y);
            }
            width = grasp_width(dist2d(g.x, g.y, pink.x, pink.y));
        } else {
            // two demonstration modes: travel along the upper or lower lane
            // around the wall, then descend onto the blue cube
            const double lane_y = std::clamp(
                (arc_mode_ == 0 ? kLaneHigh : kLaneLow) + jitter_dy_ * 0.5, 0.03, 0.97);
            if (g.x < kWallX1 + 0.04 && std::abs(g.y - lane_y) > 0.04) {
                approach(g.x, lane_y);
            } else if (g.x < kWallX1 + 0.06) {
                approach(kWallX1 + 0.10, lane_y);
            } else {
                approach(blue.x, blue.y);
            }
            width = 0.0;
        }
    } else if (task_ == "close_drawer") {
        const auto& d = objs[0];
        const double hy = kDrawerTopY - d.aux;
        if (dist2d(g.x, g.y, d.x, hy) > 0.05) {
            approach(d.x + jitter_dx_ * 0.3, hy - 0.01);
            width = 1.0;
        } else {
            tx = d.x;
            ty = g.y + speed;  // push upward to close
            width = 1.0;
        }
    } else {  // flip_mug_2d
        const auto& mug = objs[0];
        if (state_.held_object < 0) {
            approach(mug.x, mug.y);
            width = 1.0;
            if (dist2d(g.x, g.y, mug.x, mug.y) < 0.05) {
                if (g.z >= 0.35) {
                    tz = g.z - speed;  // descend into the mug first
                } else {
                    width = 0.0;
                }
            }
        } else {
            tz = g.z + speed;  // raise to flip
            width = 0.0;
        }
    }

    auto clampd = [&](double v) { return std::clamp(v, -speed, speed); };
    return {clampd(tx - g.x), clampd(ty - g.y), clampd(tz - g.z), 0.0, 0.0, 0.0, width};
}

std::array<double, 3> SimEnv::scene_color(double wx, double wy) const {
    std::array<double, 3> rgb = cfg_.background;
    auto paint = [&](const std::array<double, 3>& c) { rgb = c; };

    if (task_ == "stack_cubes" && in_wall(wx, wy)) paint({0.30, 0.30, 0.32});

    for (size_t i = 0; i < state_.objects.size(); ++i) {
        const auto& o = state_.objects[i];
        const auto c = color_rgb(o.color);
        if (o.shape == "bin") {
            // square ring
            const double ax = std::abs(wx - o.x), ay = std::abs(wy - o.y);
            const double outer = 0.085, inner = 0.060;
            if (ax < outer && ay < outer && !(ax < inner && ay < inner)) paint(c);
        } else if (o.shape == "drawer") {
            const double body_half = 0.12;
            if (std::abs(wx - o.x) < body_half && wy > 0.92) paint(c);
            if (std::abs(wx - o.x) < 0.10 && wy > kDrawerTopY - o.aux && wy <= 0.92) {
                paint({c[0] * 0.6, c[1] * 0.6, c[2] * 0.6});  // open tray, darker
            }
            const double hy = kDrawerTopY - o.aux;
            if (std::abs(wx - o.x) < 0.03 && std::abs(wy - hy) < 0.015) paint({0.9, 0.9, 0.9});
        } else if (o.shape == "circle" || o.shape == "mug") {
            if (dist2d(wx, wy, o.x, o.y) < 0.05) {
                if (o.shape == "mug" && o.aux >= 0.9 && dist2d(wx, wy, o.x, o.y) < 0.025) {
                    paint({0.95, 0.95, 0.95});  // upright mug shows its white inside
                } else {
                    paint(c);
                }
            } else if (o.shape == "mug" && std::abs(wx - (o.x + 0.06)) < 0.02 &&
                       std::abs(wy - o.y) < 0.02) {
                paint(c);  // handle
            }
        } else if (o.shape == "square") {
            if (std::abs(wx - o.x) < 0.045 && std::abs(wy - o.y) < 0.045) paint(c);
        } else if (o.shape == "diamond") {
            if (std::abs(wx - o.x) + std::abs(wy - o.y) < 0.05) paint(c);
        }
    }

    // gripper cross, shading encodes width and z
    const auto& g = state_.gripper;
    const double shade = 0.35 + 0.6 * g.width;
    if ((std::abs(wx - g.x) < 0.012 && std::abs(wy - g.y) < 0.040) ||
        (std::abs(wy - g.y) < 0.012 && std::abs(wx - g.x) < 0.040)) {
        paint({shade, shade, 0.3 + 0.7 * g.z});
    }
    return rgb;
}

Image SimEnv::render(int camera) const {
    const int S = cfg_.image_size;
    const Camera cam =
        camera_spec(camera, cfg_.view_shift_deg, state_.gripper.x, state_.gripper.y);
    const double rot = cam.rot_deg * kPi / 180.0;
    const double cr = std::cos(rot), sr = std::sin(rot);
    Image img(static_cast<size_t>(S) * S * 3);
    for (int py = 0; py < S; ++py) {
        for (int px = 0; px < S; ++px) {
            const double u = ((px + 0.5) / S - 0.5) / cam.zoom;
            const double v = (0.5 - (py + 0.5) / S) / cam.zoom;
            // rotate frame by -rot around the camera center
            const double wx = cam.cx + cr * u + sr * v;
            const double wy = cam.cy - sr * u + cr * v;
            auto rgb = scene_color(wx, wy);
            for (int c = 0; c < 3; ++c) {
                img[(static_cast<size_t>(py) * S + px) * 3 + c] =
                    std::clamp(rgb[c] * cfg_.illumination, 0.0, 1.0);
            }
        }
    }
    return img;
}

Observation SimEnv::observe() const {
    Observation obs;
    for (int c = 0; c < kNumCameras; ++c) obs.images.push_back(render(c));
    const auto& g = state_.gripper;
    obs.proprio = {g.x, g.y, g.z, g.roll, g.pitch, g.yaw, g.width};
    obs.instruction = task_instruction(task_);
    return obs;
}

std::vector<std::vector<int>> SimEnv::render_quantized() const {
    std::vector<std::vector<int>> out;
    for (int c = 0; c < kNumCameras; ++c) {
        const Image img = render(c);
        std::vector<int> q(img.size());
        for (size_t i = 0; i < img.size(); ++i) {
            q[i] = static_cast<int>(std::lround(img[i] * 255.0));
        }
        out.push_back(std::move(q));
    }
    return out;
}

}  // namespace vla
