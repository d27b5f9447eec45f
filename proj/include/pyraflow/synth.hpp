#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pyraflow/rng.hpp"
#include "pyraflow/tensor.hpp"

namespace pyraflow {

struct Vec2 {
    float x = 0.0f;
    float y = 0.0f;
};

// One rigid capsule of the kinematic tree. The local frame has its origin at
// the proximal joint with the x axis running toward the distal end; the
// capsule is the set of points within half_width of the spine [(0,0),(L,0)].
struct Segment {
    std::string name;
    int parent = -1;        // -1: root
    Vec2 attach;            // joint position in the parent's local frame
    float length = 1.0f;
    float half_width = 1.0f;
    float rest_angle = 0.0f;  // radians relative to parent at the rest pose
    int z = 0;              // draw order; higher overwrites
};

struct Skeleton {
    std::vector<Segment> segments;

    // 10-segment figure (torso, head, arms in two links, legs in two links)
    // sized for a 64x64 canvas. Image y grows downward.
    static Skeleton humanoid();

    void validate() const;
    // Joints on the chain from the root to segment i, inclusive.
    int chain_depth(int i) const;
    // Upper bound on the distance from the root to any point of segment i.
    float reach(int i) const;
};

struct Pose {
    Vec2 root;               // root joint position in image coordinates
    float root_theta = 0.0f; // radians
    std::vector<float> angles;  // per-segment offset from rest_angle
};

// 2-D rigid transform p -> R(theta) p + t.
struct Rigid {
    float c = 1.0f, s = 0.0f;  // cos/sin of the rotation
    Vec2 t;

    Vec2 apply(Vec2 p) const { return {c * p.x - s * p.y + t.x, s * p.x + c * p.y + t.y}; }
    Vec2 invert(Vec2 p) const {
        const float dx = p.x - t.x, dy = p.y - t.y;
        return {c * dx + s * dy, -s * dx + c * dy};
    }
};

// Global segment transforms (local frame -> image) for one pose.
std::vector<Rigid> forward_kinematics(const Skeleton& skeleton, const Pose& pose);

struct GenConfig {
    int width = 64;
    int height = 64;
    int count = 16;
    std::uint64_t seed = 1;

    // pose 1 ranges
    float root_jitter = 3.0f;        // px around the canvas anchor, per axis
    float root_rot_range = 0.15f;    // radians
    float joint_angle_range = 0.4f;  // radians around each rest angle

    // frame-1 -> frame-2 deltas
    float max_joint_delta = 0.1f;    // radians per joint
    float max_root_delta = 2.0f;     // px, euclidean
    float max_root_rot_delta = 0.05f;  // radians
    float background_motion = 2.0f;  // px, euclidean bound on bg offset delta

    // texture
    int noise_octaves = 3;
    std::vector<std::array<float, 3>> segment_colors;  // empty: defaults
    std::array<float, 3> background_color{0.45f, 0.45f, 0.5f};

    // Pure-translation mode: both poses identical, the whole scene (figure
    // and background) translates by one vector of norm <= translation_max.
    bool translation_only = false;
    float translation_max = 6.0f;

    // Largest ground-truth displacement this config can produce, from the
    // kinematic chain geometry (conservative).
    float displacement_bound(const Skeleton& skeleton) const;
    void validate(const Skeleton& skeleton) const;
};

struct Sample {
    std::string id;
    Tensor image1, image2;       // [3,H,W] in [0,1]
    FlowField flow;              // frame-1 -> frame-2
    Tensor mask;                 // [1,H,W] in {0,1}
    std::vector<std::int16_t> segmap;  // per pixel, -1 = background
};

struct RenderOut {
    Tensor image;                // [3,H,W]
    std::vector<std::int16_t> segmap;
    Tensor local;                // [2,H,W] owning-segment local coords (junk on bg)
};

std::pair<Pose, Pose> sample_pose_pair(Rng& rng, const Skeleton& skeleton,
                                       const GenConfig& config);

// texture_salt seeds the procedural textures; both frames of a pair must use
// the same salt so that corresponding points keep their color.
RenderOut render(const Pose& pose, const Skeleton& skeleton, const GenConfig& config,
                 Vec2 background_offset, std::uint64_t texture_salt);

std::pair<FlowField, Tensor> ground_truth_flow(
    const Pose& pose1, const Pose& pose2, const Skeleton& skeleton,
    const std::vector<std::int16_t>& segmap, const Tensor& local,
    Vec2 bg_offset1, Vec2 bg_offset2);

// Renders one full sample from its own RNG stream (seed, index).
Sample make_sample(const Skeleton& skeleton, const GenConfig& config,
                   std::uint64_t index);

// Writes count samples (two PPMs, one .flo, two PGMs each) plus
// manifest.json. Byte-reproducible from config alone; partial output is
// removed if generation fails.
void generate_dataset(const GenConfig& config, const std::string& out_dir);

struct Dataset {
    std::vector<Sample> samples;
};

Dataset load_dataset(const std::string& dir);

}  // namespace pyraflow
