#include "pyraflow/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "pyraflow/config_json.hpp"
#include "pyraflow/error.hpp"
#include "pyraflow/flowio.hpp"

namespace fs = std::filesystem;

namespace pyraflow {

namespace {

constexpr float kPi = 3.14159265358979323846f;

std::vector<std::array<float, 3>> default_colors() {
    return {{
        {0.80f, 0.30f, 0.30f},  // torso
        {0.90f, 0.70f, 0.50f},  // head
        {0.30f, 0.70f, 0.90f},  // left upper arm
        {0.20f, 0.50f, 0.90f},  // left forearm
        {0.90f, 0.60f, 0.20f},  // right upper arm
        {0.90f, 0.80f, 0.30f},  // right forearm
        {0.30f, 0.80f, 0.40f},  // left thigh
        {0.20f, 0.60f, 0.30f},  // left shin
        {0.70f, 0.40f, 0.80f},  // right thigh
        {0.50f, 0.30f, 0.70f},  // right shin
    }};
}

float lattice(std::uint64_t salt, int ix, int iy) {
    const auto ux = static_cast<std::uint64_t>(static_cast<std::int64_t>(ix));
    const auto uy = static_cast<std::uint64_t>(static_cast<std::int64_t>(iy));
    const std::uint64_t h =
        mix64(salt ^ (ux * 0x9E3779B97F4A7C15ull) ^ (uy * 0xC2B2AE3D27D4EB4Full));
    return static_cast<float>(h >> 40) * 0x1p-24f;
}

float value_noise(std::uint64_t salt, float x, float y) {
    const float fx = std::floor(x), fy = std::floor(y);
    const int ix = static_cast<int>(fx), iy = static_cast<int>(fy);
    float tx = x - fx, ty = y - fy;
    tx = tx * tx * (3.0f - 2.0f * tx);  // smoothstep keeps the field C1
    ty = ty * ty * (3.0f - 2.0f * ty);
    const float v00 = lattice(salt, ix, iy), v10 = lattice(salt, ix + 1, iy);
    const float v01 = lattice(salt, ix, iy + 1), v11 = lattice(salt, ix + 1, iy + 1);
    return (v00 * (1.0f - tx) + v10 * tx) * (1.0f - ty) +
           (v01 * (1.0f - tx) + v11 * tx) * ty;
}

// Octaves double in frequency from an 8 px base lattice; amplitudes halve.
// The fine-heavy spectrum keeps strong gradients at every pyramid level,
// which the residual predictors need to converge inside the training budget.
float octave_noise(std::uint64_t salt, float x, float y, int octaves) {
    float amp = 1.0f, freq = 0.125f, sum = 0.0f, norm = 0.0f;
    for (int o = 0; o < octaves; ++o) {
        sum += amp * value_noise(mix64(salt ^ (0xA17Eull + o)), x * freq, y * freq);
        norm += amp;
        amp *= 0.5f;
        freq *= 2.0f;
    }
    return sum / norm;
}

// full-swing modulation: weak texture contrast starves training of gradient
// signal, so the noise is stretched to nearly the whole [0, 1] range
float shade(float n) { return 0.5f + 0.9f * (n - 0.5f); }

Vec2 disc_sample(Rng& rng, float max_norm) {
    const float theta = rng.uniform(0.0f, 2.0f * kPi);
    const float r = max_norm * std::sqrt(rng.unit());
    return {r * std::cos(theta), r * std::sin(theta)};
}

std::string sample_id(std::uint64_t index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%05llu", static_cast<unsigned long long>(index));
    return buf;
}

}  // namespace

Skeleton Skeleton::humanoid() {
    Skeleton sk;
    auto seg = [&](const char* name, int parent, float ax, float ay, float len,
                   float hw, float rest, int z) {
        sk.segments.push_back({name, parent, {ax, ay}, len, hw, rest, z});
    };
    // Lengths in px on a 64x64 canvas; image y grows downward, so the torso
    // rest direction -pi/2 points up.
    seg("torso", -1, 0.0f, 0.0f, 14.0f, 4.5f, -0.5f * kPi, 0);
    seg("head", 0, 14.0f, 0.0f, 6.0f, 3.0f, 0.0f, 9);
    seg("l_upper_arm", 0, 12.0f, 0.0f, 8.0f, 1.8f, 2.7f, 5);
    seg("l_forearm", 2, 8.0f, 0.0f, 7.0f, 1.5f, 0.2f, 6);
    seg("r_upper_arm", 0, 12.0f, 0.0f, 8.0f, 1.8f, -2.7f, 7);
    seg("r_forearm", 4, 8.0f, 0.0f, 7.0f, 1.5f, -0.2f, 8);
    seg("l_thigh", 0, 0.0f, 0.0f, 9.0f, 2.2f, 2.95f, 1);
    seg("l_shin", 6, 9.0f, 0.0f, 8.0f, 1.8f, -0.1f, 2);
    seg("r_thigh", 0, 0.0f, 0.0f, 9.0f, 2.2f, -2.95f, 3);
    seg("r_shin", 8, 9.0f, 0.0f, 8.0f, 1.8f, 0.1f, 4);
    return sk;
}

void Skeleton::validate() const {
    if (segments.empty()) throw ConfigError("skeleton has no segments");
    std::set<int> zs;
    for (std::size_t i = 0; i < segments.size(); ++i) {
        const Segment& s = segments[i];
        if (i == 0 ? s.parent != -1 : (s.parent < 0 || s.parent >= static_cast<int>(i)))
            throw ConfigError("segment " + s.name + " has invalid parent");
        if (s.length <= 0.0f || s.half_width <= 0.0f)
            throw ConfigError("segment " + s.name + " has non-positive size");
        if (!std::isfinite(s.rest_angle) || !std::isfinite(s.attach.x) ||
            !std::isfinite(s.attach.y))
            throw ConfigError("segment " + s.name + " has non-finite geometry");
        zs.insert(s.z);
    }
    for (int z = 0; z < static_cast<int>(segments.size()); ++z)
        if (!zs.count(z)) throw ConfigError("draw orders are not a permutation");
}

int Skeleton::chain_depth(int i) const {
    int d = 0;
    for (; i >= 0; i = segments[i].parent) ++d;
    return d;
}

float Skeleton::reach(int i) const {
    float r = segments[i].length + segments[i].half_width;
    for (int s = i; s >= 0; s = segments[s].parent)
        r += std::hypot(segments[s].attach.x, segments[s].attach.y);
    return r;
}

std::vector<Rigid> forward_kinematics(const Skeleton& skeleton, const Pose& pose) {
    const std::size_t n = skeleton.segments.size();
    if (pose.angles.size() != n)
        throw ConfigError("pose has " + std::to_string(pose.angles.size()) +
                          " angles for " + std::to_string(n) + " segments");
    std::vector<Rigid> T(n);
    std::vector<float> theta(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Segment& s = skeleton.segments[i];
        const float local = s.rest_angle + pose.angles[i];
        if (s.parent < 0) {
            theta[i] = pose.root_theta + local;
            T[i].t = pose.root;
        } else {
            theta[i] = theta[s.parent] + local;
            T[i].t = T[s.parent].apply(s.attach);
        }
        T[i].c = std::cos(theta[i]);
        T[i].s = std::sin(theta[i]);
    }
    return T;
}

float GenConfig::displacement_bound(const Skeleton& skeleton) const {
    if (translation_only) return translation_max;
    float worst = background_motion;
    for (std::size_t i = 0; i < skeleton.segments.size(); ++i) {
        const float angle = max_root_rot_delta +
                            skeleton.chain_depth(static_cast<int>(i)) * max_joint_delta;
        worst = std::max(worst, max_root_delta +
                                    skeleton.reach(static_cast<int>(i)) * angle);
    }
    return worst;
}

void GenConfig::validate(const Skeleton& skeleton) const {
    skeleton.validate();
    if (width < 8 || height < 8) throw ConfigError("resolution below 8x8");
    if (count < 0) throw ConfigError("negative sample count");
    if (noise_octaves < 1 || noise_octaves > 8)
        throw ConfigError("noise_octaves out of range [1,8]");
    for (float v : {root_jitter, root_rot_range, joint_angle_range, max_joint_delta,
                    max_root_delta, max_root_rot_delta, background_motion,
                    translation_max})
        if (!(v >= 0.0f) || !std::isfinite(v))
            throw ConfigError("negative or non-finite range in gen config");
    if (!segment_colors.empty() && segment_colors.size() != skeleton.segments.size())
        throw ConfigError("segment_colors needs one entry per segment");
    const float bound = displacement_bound(skeleton);
    const float limit = std::min(width, height) / 4.0f;
    if (bound > limit)
        throw ConfigError("max displacement " + std::to_string(bound) +
                          " px exceeds quarter-resolution limit " +
                          std::to_string(limit));
}

std::pair<Pose, Pose> sample_pose_pair(Rng& rng, const Skeleton& skeleton,
                                       const GenConfig& config) {
    const std::size_t n = skeleton.segments.size();
    Pose p1;
    p1.root = {0.5f * config.width + rng.uniform(-config.root_jitter, config.root_jitter),
               0.53f * config.height +
                   rng.uniform(-config.root_jitter, config.root_jitter)};
    p1.root_theta = rng.uniform(-config.root_rot_range, config.root_rot_range);
    p1.angles.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        p1.angles[i] = rng.uniform(-config.joint_angle_range, config.joint_angle_range);

    Pose p2 = p1;
    if (config.translation_only) {
        // magnitude uniform in [0, max]: dense small-motion coverage keeps the
        // refinement levels inside their trainable regime
        const float theta = rng.uniform(0.0f, 2.0f * kPi);
        const float r = rng.uniform(0.0f, config.translation_max);
        p2.root.x += r * std::cos(theta);
        p2.root.y += r * std::sin(theta);
        return {p1, p2};
    }
    const Vec2 d = disc_sample(rng, config.max_root_delta);
    p2.root.x += d.x;
    p2.root.y += d.y;
    p2.root_theta += rng.uniform(-config.max_root_rot_delta, config.max_root_rot_delta);
    for (std::size_t i = 0; i < n; ++i)
        p2.angles[i] += rng.uniform(-config.max_joint_delta, config.max_joint_delta);
    return {p1, p2};
}

RenderOut render(const Pose& pose, const Skeleton& skeleton, const GenConfig& config,
                 Vec2 background_offset, std::uint64_t texture_salt) {
    const int h = config.height, w = config.width;
    const std::vector<Rigid> T = forward_kinematics(skeleton, pose);

    std::vector<int> order(skeleton.segments.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        return skeleton.segments[a].z < skeleton.segments[b].z;
    });

    RenderOut out{Tensor(3, h, w), std::vector<std::int16_t>(
                                       static_cast<std::size_t>(h) * w, -1),
                  Tensor(2, h, w)};
    float* lx = out.local.plane(0);
    float* ly = out.local.plane(1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int i = y * w + x;
            const Vec2 p{static_cast<float>(x), static_cast<float>(y)};
            for (int s : order) {
                const Segment& seg = skeleton.segments[s];
                const Vec2 q = T[s].invert(p);
                const float t = std::clamp(q.x, 0.0f, seg.length);
                const float dx = q.x - t, dy = q.y;
                if (dx * dx + dy * dy <= seg.half_width * seg.half_width) {
                    out.segmap[i] = static_cast<std::int16_t>(s);
                    lx[i] = q.x;
                    ly[i] = q.y;
                }
            }
        }

    const auto colors =
        config.segment_colors.empty() ? default_colors() : config.segment_colors;
    const std::uint64_t bg_salt = mix64(texture_salt ^ 0xB6ull);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int i = y * w + x;
            const int s = out.segmap[i];
            float m;
            const std::array<float, 3>* base;
            if (s >= 0) {
                m = shade(octave_noise(mix64(texture_salt ^ (0x5E6ull + s)), lx[i],
                                       ly[i], config.noise_octaves));
                base = &colors[s];
            } else {
                m = shade(octave_noise(bg_salt, x - background_offset.x,
                                       y - background_offset.y, config.noise_octaves));
                base = &config.background_color;
            }
            for (int c = 0; c < 3; ++c) out.image.plane(c)[i] = (*base)[c] * m;
        }
    return out;
}

std::pair<FlowField, Tensor> ground_truth_flow(
    const Pose& pose1, const Pose& pose2, const Skeleton& skeleton,
    const std::vector<std::int16_t>& segmap, const Tensor& local,
    Vec2 bg_offset1, Vec2 bg_offset2) {
    if (local.channels() != 2)
        throw ConfigError("local coordinate map must have 2 channels");
    const int h = local.height(), w = local.width();
    if (segmap.size() != static_cast<std::size_t>(h) * w)
        throw ConfigError("segment map size does not match coordinate map");
    if (pose1.angles.size() != skeleton.segments.size() ||
        pose2.angles.size() != skeleton.segments.size())
        throw ConfigError("pose does not match skeleton");

    const std::vector<Rigid> T2 = forward_kinematics(skeleton, pose2);
    const Vec2 bg_flow{bg_offset2.x - bg_offset1.x, bg_offset2.y - bg_offset1.y};

    FlowField flow(2, h, w);
    Tensor mask(1, h, w);
    const float* lx = local.plane(0);
    const float* ly = local.plane(1);
    float* u = flow.plane(0);
    float* v = flow.plane(1);
    float* mk = mask.plane(0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int i = y * w + x;
            const int s = segmap[i];
            Vec2 target;
            if (s >= 0) {
                if (s >= static_cast<int>(skeleton.segments.size()))
                    throw ConfigError("segment map references unknown segment");
                target = T2[s].apply({lx[i], ly[i]});
            } else {
                target = {x + bg_flow.x, y + bg_flow.y};
            }
            u[i] = target.x - x;
            v[i] = target.y - y;
            mk[i] = (target.x >= 0.0f && target.x <= w - 1.0f && target.y >= 0.0f &&
                     target.y <= h - 1.0f)
                        ? 1.0f
                        : 0.0f;
        }
    return {std::move(flow), std::move(mask)};
}

Sample make_sample(const Skeleton& skeleton, const GenConfig& config,
                   std::uint64_t index) {
    Rng rng(stream_seed(config.seed, 0x5A117, index));
    auto [pose1, pose2] = sample_pose_pair(rng, skeleton, config);

    const Vec2 bg1{rng.uniform(0.0f, 256.0f), rng.uniform(0.0f, 256.0f)};
    Vec2 bg2;
    if (config.translation_only) {
        bg2 = {bg1.x + (pose2.root.x - pose1.root.x),
               bg1.y + (pose2.root.y - pose1.root.y)};
    } else {
        const Vec2 d = disc_sample(rng, config.background_motion);
        bg2 = {bg1.x + d.x, bg1.y + d.y};
    }

    const std::uint64_t salt = stream_seed(config.seed, 0x7EC5, index);
    RenderOut r1 = render(pose1, skeleton, config, bg1, salt);
    RenderOut r2 = render(pose2, skeleton, config, bg2, salt);
    auto [flow, mask] =
        ground_truth_flow(pose1, pose2, skeleton, r1.segmap, r1.local, bg1, bg2);

    Sample s{sample_id(index), std::move(r1.image), std::move(r2.image),
             std::move(flow), std::move(mask), std::move(r1.segmap)};
    return s;
}

void generate_dataset(const GenConfig& config, const std::string& out_dir) {
    const Skeleton skeleton = Skeleton::humanoid();
    config.validate(skeleton);

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());

    std::vector<std::string> written;
    auto cleanup = [&] {
        for (const std::string& f : written) fs::remove(f, ec);
    };
    try {
        nlohmann::json samples = nlohmann::json::array();
        for (int i = 0; i < config.count; ++i) {
            const Sample s = make_sample(skeleton, config, static_cast<std::uint64_t>(i));
            const std::string base = out_dir + "/" + s.id;
            const std::string img1 = s.id + "_img1.ppm", img2 = s.id + "_img2.ppm",
                              flo = s.id + "_flow.flo", mask = s.id + "_mask.pgm",
                              seg = s.id + "_seg.pgm";
            written.push_back(base + "_img1.ppm");
            write_ppm(written.back(), s.image1);
            written.push_back(base + "_img2.ppm");
            write_ppm(written.back(), s.image2);
            written.push_back(base + "_flow.flo");
            write_flo(written.back(), s.flow);
            written.push_back(base + "_mask.pgm");
            write_pgm(written.back(), s.mask);
            std::vector<unsigned char> ids(s.segmap.size());
            for (std::size_t k = 0; k < ids.size(); ++k)
                ids[k] = s.segmap[k] < 0 ? 255 : static_cast<unsigned char>(s.segmap[k]);
            written.push_back(base + "_seg.pgm");
            write_pgm_u8(written.back(), ids, config.height, config.width);
            samples.push_back({{"id", s.id},
                               {"image1", img1},
                               {"image2", img2},
                               {"flow", flo},
                               {"mask", mask},
                               {"segmap", seg}});
        }
        nlohmann::json manifest{{"version", 1},
                                {"seed", config.seed},
                                {"config", gen_config_to_json(config)},
                                {"samples", samples}};
        const std::string path = out_dir + "/manifest.json";
        written.push_back(path);
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + path + " for writing");
        out << manifest.dump(2) << "\n";
        out.flush();
        if (!out) throw IoError("write failed for " + path);
    } catch (...) {
        cleanup();
        throw;
    }
}

Dataset load_dataset(const std::string& dir) {
    const std::string manifest_path = dir + "/manifest.json";
    std::ifstream in(manifest_path, std::ios::binary);
    if (!in) throw IoError("cannot open " + manifest_path);
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("bad manifest: " + std::string(e.what()));
    }
    if (!manifest.is_object() || !manifest.contains("samples") ||
        !manifest["samples"].is_array())
        throw FormatError("bad manifest: missing samples array");

    Dataset ds;
    for (const auto& entry : manifest["samples"]) {
        for (const char* key : {"id", "image1", "image2", "flow", "mask", "segmap"})
            if (!entry.contains(key) || !entry[key].is_string())
                throw FormatError("bad manifest: sample missing " + std::string(key));
        Sample s;
        s.id = entry["id"].get<std::string>();
        s.image1 = read_ppm(dir + "/" + entry["image1"].get<std::string>());
        s.image2 = read_ppm(dir + "/" + entry["image2"].get<std::string>());
        s.flow = read_flo(dir + "/" + entry["flow"].get<std::string>());
        s.mask = read_pgm(dir + "/" + entry["mask"].get<std::string>());
        int h = 0, w = 0;
        const auto ids = read_pgm_u8(dir + "/" + entry["segmap"].get<std::string>(), h, w);
        if (!s.image1.same_shape(s.image2) || s.image1.height() != s.flow.height() ||
            s.image1.width() != s.flow.width() || h != s.flow.height() ||
            w != s.flow.width() || s.mask.height() != h || s.mask.width() != w)
            throw DataError("sample " + s.id + " has inconsistent shapes");
        s.segmap.resize(ids.size());
        for (std::size_t i = 0; i < ids.size(); ++i)
            s.segmap[i] = ids[i] == 255 ? std::int16_t(-1)
                                        : static_cast<std::int16_t>(ids[i]);
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

}  // namespace pyraflow
