#include <doctest.h>

#include <pyraflow/config_json.hpp>
#include <pyraflow/flowio.hpp>
#include <pyraflow/rng.hpp>
#include <pyraflow/synth.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "helpers.hpp"

using namespace pyraflow;
using testutil::TempDir;

namespace {

// Independent forward kinematics in double precision, straight from the
// definition: angles accumulate down the chain, origins chain through the
// parent transform.
struct RefTransform {
    double c = 1.0, s = 0.0, tx = 0.0, ty = 0.0;

    Vec2 apply(Vec2 p) const {
        return {static_cast<float>(c * p.x - s * p.y + tx),
                static_cast<float>(s * p.x + c * p.y + ty)};
    }
};

std::vector<RefTransform> fk_ref(const Skeleton& skeleton, const Pose& pose) {
    const std::size_t n = skeleton.segments.size();
    std::vector<double> theta(n);
    std::vector<RefTransform> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Segment& seg = skeleton.segments[i];
        double th = static_cast<double>(seg.rest_angle) + pose.angles[i];
        double tx, ty;
        if (seg.parent < 0) {
            th += pose.root_theta;
            tx = pose.root.x;
            ty = pose.root.y;
        } else {
            const RefTransform& pt = out[static_cast<std::size_t>(seg.parent)];
            th += theta[static_cast<std::size_t>(seg.parent)];
            tx = pt.c * seg.attach.x - pt.s * seg.attach.y + pt.tx;
            ty = pt.s * seg.attach.x + pt.c * seg.attach.y + pt.ty;
        }
        theta[i] = th;
        out[i] = {std::cos(th), std::sin(th), tx, ty};
    }
    return out;
}

Skeleton one_capsule(float length, float half_width) {
    Skeleton sk;
    sk.segments.push_back({"rod", -1, {}, length, half_width, 0.0f, 0});
    return sk;
}

float bilinear_clamped(const Tensor& img, int c, float sx, float sy) {
    const int h = img.height(), w = img.width();
    sx = std::clamp(sx, 0.0f, static_cast<float>(w - 1));
    sy = std::clamp(sy, 0.0f, static_cast<float>(h - 1));
    const int x0 = static_cast<int>(sx), y0 = static_cast<int>(sy);
    const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
    const float ax = sx - x0, ay = sy - y0;
    return (1 - ay) * ((1 - ax) * img.at(c, y0, x0) + ax * img.at(c, y0, x1)) +
           ay * ((1 - ax) * img.at(c, y1, x0) + ax * img.at(c, y1, x1));
}

}  // namespace

TEST_CASE("humanoid skeleton is well formed") {
    Skeleton sk = Skeleton::humanoid();
    sk.validate();
    REQUIRE_EQ(sk.segments.size(), 10);

    int roots = 0;
    std::set<int> zs;
    for (std::size_t i = 0; i < sk.segments.size(); ++i) {
        const Segment& seg = sk.segments[i];
        if (seg.parent < 0)
            ++roots;
        else
            CHECK_LT(seg.parent, static_cast<int>(i));
        CHECK_GT(seg.length, 0.0f);
        CHECK_GT(seg.half_width, 0.0f);
        zs.insert(seg.z);
    }
    CHECK_EQ(roots, 1);
    CHECK_EQ(zs.size(), 10);  // z is a permutation: draw order is total
    CHECK_EQ(*zs.begin(), 0);
    CHECK_EQ(*zs.rbegin(), 9);

    CHECK_EQ(sk.chain_depth(0), 1);
    bool some_depth3 = false;
    for (int i = 0; i < 10; ++i) {
        if (sk.chain_depth(i) == 3) some_depth3 = true;
        CHECK_GE(sk.reach(i), sk.segments[i].length + sk.segments[i].half_width);
        const int p = sk.segments[i].parent;
        if (p >= 0) {
            // reach sums attach offsets along the chain plus the own capsule
            const Segment& ps = sk.segments[p];
            CHECK_GT(sk.reach(i) + ps.length + ps.half_width, sk.reach(p));
        }
    }
    CHECK(some_depth3);  // two-link limbs hang off the torso
}

TEST_CASE("forward_kinematics matches the double-precision reference") {
    Skeleton sk = Skeleton::humanoid();
    Rng rng(stream_seed(3, 0xF14A));
    for (int trial = 0; trial < 5; ++trial) {
        CAPTURE(trial);
        Pose pose;
        pose.root = {rng.uniform(20.0f, 44.0f), rng.uniform(20.0f, 44.0f)};
        pose.root_theta = rng.uniform(-0.5f, 0.5f);
        pose.angles.resize(10);
        for (float& a : pose.angles) a = rng.uniform(-0.6f, 0.6f);

        std::vector<Rigid> got = forward_kinematics(sk, pose);
        std::vector<RefTransform> want = fk_ref(sk, pose);
        REQUIRE_EQ(got.size(), 10);
        for (int i = 0; i < 10; ++i) {
            CHECK_LT(std::abs(got[i].c - static_cast<float>(want[i].c)), 1e-5f);
            CHECK_LT(std::abs(got[i].s - static_cast<float>(want[i].s)), 1e-5f);
            CHECK_LT(std::abs(got[i].t.x - static_cast<float>(want[i].tx)), 1e-4f);
            CHECK_LT(std::abs(got[i].t.y - static_cast<float>(want[i].ty)), 1e-4f);
        }
    }
    // the root segment sits exactly at the pose root
    Pose origin;
    origin.root = {31.5f, 34.0f};
    origin.angles.assign(10, 0.0f);
    CHECK_EQ(forward_kinematics(sk, origin)[0].t.x, 31.5f);
    CHECK_EQ(forward_kinematics(sk, origin)[0].t.y, 34.0f);
}

TEST_CASE("sample_pose_pair respects every configured range") {
    Skeleton sk = Skeleton::humanoid();
    GenConfig config;
    config.validate(sk);
    Rng rng(stream_seed(4, 0x9053));
    for (int trial = 0; trial < 200; ++trial) {
        auto [p1, p2] = sample_pose_pair(rng, sk, config);
        CHECK_LE(std::abs(p1.root.x - 32.0f), config.root_jitter + 1e-4f);
        CHECK_LE(std::abs(p1.root.y - 0.53f * 64.0f), config.root_jitter + 1e-4f);
        CHECK_LE(std::abs(p1.root_theta), config.root_rot_range + 1e-6f);
        CHECK_LE(std::hypot(p2.root.x - p1.root.x, p2.root.y - p1.root.y),
                 config.max_root_delta + 1e-4f);
        CHECK_LE(std::abs(p2.root_theta - p1.root_theta),
                 config.max_root_rot_delta + 1e-6f);
        REQUIRE_EQ(p1.angles.size(), 10);
        for (std::size_t i = 0; i < 10; ++i) {
            CHECK_LE(std::abs(p1.angles[i]), config.joint_angle_range + 1e-6f);
            CHECK_LE(std::abs(p2.angles[i] - p1.angles[i]),
                     config.max_joint_delta + 1e-6f);
        }
    }

    config.translation_only = true;
    for (int trial = 0; trial < 50; ++trial) {
        auto [p1, p2] = sample_pose_pair(rng, sk, config);
        CHECK_EQ(p1.root_theta, p2.root_theta);
        CHECK(p1.angles == p2.angles);
        CHECK_LE(std::hypot(p2.root.x - p1.root.x, p2.root.y - p1.root.y),
                 config.translation_max + 1e-4f);
    }
}

TEST_CASE("ground_truth_flow matches rigid transforms of local coordinates") {
    Skeleton sk = Skeleton::humanoid();
    GenConfig config;
    Rng rng(stream_seed(5, 0x6107));
    auto [p1, p2] = sample_pose_pair(rng, sk, config);
    const Vec2 bg1{17.25f, 93.5f}, bg2{18.0f, 92.75f};
    RenderOut r1 = render(p1, sk, config, bg1, 555);
    auto [flow, mask] = ground_truth_flow(p1, p2, sk, r1.segmap, r1.local, bg1, bg2);

    std::vector<RefTransform> t2 = fk_ref(sk, p2);
    int figure_pixels = 0;
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
            const int s = r1.segmap[static_cast<std::size_t>(y) * 64 + x];
            float eu, ev;
            if (s >= 0) {
                ++figure_pixels;
                const Vec2 q = t2[static_cast<std::size_t>(s)].apply(
                    {r1.local.at(0, y, x), r1.local.at(1, y, x)});
                eu = q.x - static_cast<float>(x);
                ev = q.y - static_cast<float>(y);
            } else {
                eu = bg2.x - bg1.x;
                ev = bg2.y - bg1.y;
            }
            CHECK_LT(std::abs(flow.at(0, y, x) - eu), 1e-4f);
            CHECK_LT(std::abs(flow.at(1, y, x) - ev), 1e-4f);
            // mask = target-in-frame predicate, checked away from the border
            const float tx = x + flow.at(0, y, x), ty = y + flow.at(1, y, x);
            const float margin =
                std::min(std::min(tx, 63.0f - tx), std::min(ty, 63.0f - ty));
            if (std::abs(margin) > 1e-3f)
                CHECK_EQ(mask.at(0, y, x), margin > 0.0f ? 1.0f : 0.0f);
        }
    CHECK_GT(figure_pixels, 200);  // the figure must actually be in frame
}

TEST_CASE("identical poses give zero flow") {
    Skeleton sk = Skeleton::humanoid();
    GenConfig config;
    Rng rng(stream_seed(6, 0x0F10));
    auto [p1, p2] = sample_pose_pair(rng, sk, config);
    (void)p2;
    const Vec2 bg{41.0f, 7.5f};
    RenderOut r1 = render(p1, sk, config, bg, 99);
    auto [flow, mask] = ground_truth_flow(p1, p1, sk, r1.segmap, r1.local, bg, bg);
    for (float v : flow.flat()) CHECK_LT(std::abs(v), 1e-4f);
    // float round-trip noise can nudge exact-border targets out; interior
    // pixels must all stay valid
    for (int y = 1; y < 63; ++y)
        for (int x = 1; x < 63; ++x) CHECK_EQ(mask.at(0, y, x), 1.0f);
}

TEST_CASE("moving one arm joint leaves the rest of the body still") {
    Skeleton sk = Skeleton::humanoid();
    GenConfig config;
    Rng rng(stream_seed(7, 0x0A21));
    auto [p1, unused] = sample_pose_pair(rng, sk, config);
    (void)unused;
    Pose p2 = p1;
    p2.angles[2] += 0.15f;  // left upper arm; children follow

    RenderOut r1 = render(p1, sk, config, {0, 0}, 1234);
    auto [flow, mask] = ground_truth_flow(p1, p2, sk, r1.segmap, r1.local, {0, 0}, {0, 0});
    (void)mask;
    float arm_max = 0.0f;
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
            const int s = r1.segmap[static_cast<std::size_t>(y) * 64 + x];
            const float mag = std::hypot(flow.at(0, y, x), flow.at(1, y, x));
            if (s == 2 || s == 3)
                arm_max = std::max(arm_max, mag);
            else
                CHECK_LT(mag, 1e-4f);
        }
    CHECK_GT(arm_max, 0.4f);  // ~8 px of arm times 0.15 rad
}

TEST_CASE("per-segment flow is rigid under a least-squares fit") {
    Skeleton sk = Skeleton::humanoid();
    GenConfig config;
    Sample sample = make_sample(sk, config, 2);

    for (int s = 0; s < 10; ++s) {
        std::vector<std::array<double, 4>> pts;  // x, y, x', y'
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x)
                if (sample.segmap[static_cast<std::size_t>(y) * 64 + x] == s)
                    pts.push_back({static_cast<double>(x), static_cast<double>(y),
                                   x + static_cast<double>(sample.flow.at(0, y, x)),
                                   y + static_cast<double>(sample.flow.at(1, y, x))});
        if (pts.size() < 10) continue;
        CAPTURE(s);

        double cx = 0, cy = 0, dx = 0, dy = 0;
        for (const auto& p : pts) {
            cx += p[0]; cy += p[1]; dx += p[2]; dy += p[3];
        }
        const double n = static_cast<double>(pts.size());
        cx /= n; cy /= n; dx /= n; dy /= n;
        double sc = 0, ss = 0;
        for (const auto& p : pts) {
            const double ax = p[0] - cx, ay = p[1] - cy;
            const double bx = p[2] - dx, by = p[3] - dy;
            sc += ax * bx + ay * by;
            ss += ax * by - ay * bx;
        }
        const double theta = std::atan2(ss, sc);
        const double c = std::cos(theta), si = std::sin(theta);
        double sq = 0;
        for (const auto& p : pts) {
            const double px = c * (p[0] - cx) - si * (p[1] - cy) + dx;
            const double py = si * (p[0] - cx) + c * (p[1] - cy) + dy;
            sq += (px - p[2]) * (px - p[2]) + (py - p[3]) * (py - p[3]);
        }
        CHECK_LT(std::sqrt(sq / n), 1e-3);
    }
}

TEST_CASE("pure translation mode moves the whole scene by one vector") {
    Skeleton sk = Skeleton::humanoid();
    GenConfig config;
    config.translation_only = true;
    for (std::uint64_t idx : {0ull, 1ull, 2ull}) {
        CAPTURE(idx);
        Sample sample = make_sample(sk, config, idx);
        const float u0 = sample.flow.at(0, 0, 0), v0 = sample.flow.at(1, 0, 0);
        CHECK_LE(std::hypot(u0, v0), config.translation_max + 1e-3f);
        float dev = 0.0f;
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x)
                dev = std::max({dev, std::abs(sample.flow.at(0, y, x) - u0),
                                std::abs(sample.flow.at(1, y, x) - v0)});
        CHECK_LT(dev, 1e-3f);
    }
}

TEST_CASE("flow magnitudes stay under the configured displacement bound") {
    Skeleton sk = Skeleton::humanoid();
    GenConfig config;
    const float bound = config.displacement_bound(sk);
    CHECK_LE(bound, 16.0f);
    for (std::uint64_t idx = 0; idx < 6; ++idx) {
        Sample sample = make_sample(sk, config, idx);
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x)
                CHECK_LE(std::hypot(sample.flow.at(0, y, x), sample.flow.at(1, y, x)),
                         bound + 1e-3f);
    }
}

TEST_CASE("brightness constancy holds away from occlusions") {
    Skeleton sk = Skeleton::humanoid();
    GenConfig config;
    Rng rng(stream_seed(11, 0xBC01));
    auto [p1, p2] = sample_pose_pair(rng, sk, config);
    const Vec2 bg1{12.5f, 200.25f}, bg2{13.25f, 199.0f};
    const std::uint64_t salt = 4242;
    RenderOut r1 = render(p1, sk, config, bg1, salt);
    RenderOut r2 = render(p2, sk, config, bg2, salt);
    auto [flow, mask] = ground_truth_flow(p1, p2, sk, r1.segmap, r1.local, bg1, bg2);

    double abs_err = 0.0;
    std::int64_t clean = 0, valid = 0;
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
            if (mask.at(0, y, x) < 0.5f) continue;
            ++valid;
            const float sx = x + flow.at(0, y, x), sy = y + flow.at(1, y, x);
            // all four bilinear taps must land on the same material: the
            // frame-1 owner for figure pixels, background for background
            const int owner = r1.segmap[static_cast<std::size_t>(y) * 64 + x];
            const int x0 = static_cast<int>(sx), y0 = static_cast<int>(sy);
            bool same = x0 >= 0 && y0 >= 0 && x0 + 1 < 64 && y0 + 1 < 64;
            for (int dy = 0; same && dy < 2; ++dy)
                for (int dx = 0; same && dx < 2; ++dx)
                    same = r2.segmap[static_cast<std::size_t>(y0 + dy) * 64 +
                                     (x0 + dx)] == owner;
            if (!same) continue;
            ++clean;
            for (int c = 0; c < 3; ++c)
                abs_err += std::abs(bilinear_clamped(r2.image, c, sx, sy) -
                                    r1.image.at(c, y, x));
        }
    REQUIRE_GT(valid, 0);
    CHECK_GT(static_cast<double>(clean) / static_cast<double>(valid), 0.5);
    CHECK_LT(abs_err / (3.0 * static_cast<double>(clean)), 0.05);
}

TEST_CASE("integer root shifts reproduce images bit for bit") {
    Skeleton sk = one_capsule(10.0f, 3.0f);
    GenConfig config;
    Pose p1;
    p1.root = {24.5f, 30.25f};  // binary fractions keep +4/+2 shifts exact
    p1.root_theta = 0.7f;
    p1.angles = {0.0f};
    Pose p2 = p1;
    p2.root.x += 4.0f;
    p2.root.y += 2.0f;
    const Vec2 bg1{64.0f, 129.5f};
    const Vec2 bg2{bg1.x + 4.0f, bg1.y + 2.0f};
    RenderOut r1 = render(p1, sk, config, bg1, 31337);
    RenderOut r2 = render(p2, sk, config, bg2, 31337);

    int figure = 0;
    for (int y = 0; y < 64 - 2; ++y)
        for (int x = 0; x < 64 - 4; ++x) {
            const std::size_t a = static_cast<std::size_t>(y) * 64 + x;
            const std::size_t b = static_cast<std::size_t>(y + 2) * 64 + (x + 4);
            CHECK_EQ(r1.segmap[a], r2.segmap[b]);
            if (r1.segmap[a] >= 0) ++figure;
            for (int c = 0; c < 3; ++c) {
                const float va = r1.image.at(c, y, x);
                const float vb = r2.image.at(c, y + 2, x + 4);
                CHECK_EQ(std::memcmp(&va, &vb, 4), 0);
            }
        }
    CHECK_GT(figure, 50);

    auto [flow, mask] = ground_truth_flow(p1, p2, sk, r1.segmap, r1.local, bg1, bg2);
    (void)mask;
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
            CHECK_LT(std::abs(flow.at(0, y, x) - 4.0f), 1e-4f);
            CHECK_LT(std::abs(flow.at(1, y, x) - 2.0f), 1e-4f);
        }
}

TEST_CASE("valid mask is exactly the in-frame predicate of the targets") {
    Skeleton sk = one_capsule(12.0f, 4.0f);
    GenConfig config;
    Pose p1;
    p1.root = {52.0f, 32.0f};  // near the right edge
    p1.root_theta = 0.0f;
    p1.angles = {0.0f};
    Pose p2 = p1;
    p2.root.x += 9.0f;  // pushes capsule tips past the border
    auto r1 = render(p1, sk, config, {0, 0}, 7);
    auto [flow, mask] = ground_truth_flow(p1, p2, sk, r1.segmap, r1.local,
                                          {0, 0}, {4.0f, 0.0f});

    int invalid = 0;
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
            const float tx = x + flow.at(0, y, x);
            const float ty = y + flow.at(1, y, x);
            // skip targets within float noise of the boundary itself
            if (std::min({tx, ty, 63.0f - tx, 63.0f - ty}) > -1e-3f &&
                std::min({tx, ty, 63.0f - tx, 63.0f - ty}) < 1e-3f)
                continue;
            const bool in = tx >= 0.0f && tx <= 63.0f && ty >= 0.0f && ty <= 63.0f;
            CHECK_EQ(mask.at(0, y, x), in ? 1.0f : 0.0f);
            if (!in) ++invalid;
        }
    CHECK_GT(invalid, 20);  // the push must really invalidate pixels
}

TEST_CASE("generate_dataset is byte-reproducible and loads back") {
    Skeleton sk = Skeleton::humanoid();
    GenConfig config;
    config.width = config.height = 48;
    config.count = 3;
    config.seed = 9;
    config.root_jitter = 2.0f;

    TempDir tmp("gen");
    const std::string da = tmp.str("a"), db = tmp.str("b");
    generate_dataset(config, da);
    generate_dataset(config, db);

    std::vector<std::string> names;
    for (const auto& e : std::filesystem::directory_iterator(da))
        names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    CHECK_EQ(names.size(), 3 * 5 + 1);
    for (const std::string& name : names) {
        CAPTURE(name);
        CHECK(testutil::same_file_bytes(da + "/" + name, db + "/" + name));
    }

    Dataset ds = load_dataset(da);
    REQUIRE_EQ(ds.samples.size(), 3);
    for (std::uint64_t i = 0; i < 3; ++i) {
        const Sample& got = ds.samples[i];
        Sample want = make_sample(sk, config, i);
        CHECK_EQ(got.id, want.id);
        REQUIRE(got.image1.same_shape(want.image1));
        REQUIRE(got.flow.same_shape(want.flow));
        CHECK(std::memcmp(got.flow.data(), want.flow.data(),
                          got.flow.size() * 4) == 0);  // .flo is lossless
        CHECK(got.segmap == want.segmap);
        for (std::size_t k = 0; k < got.mask.size(); ++k)
            CHECK_EQ(got.mask.flat()[k], want.mask.flat()[k]);
        float img_err = 0.0f;
        for (std::size_t k = 0; k < got.image1.size(); ++k)
            img_err = std::max(img_err, std::abs(got.image1.flat()[k] -
                                                 want.image1.flat()[k]));
        CHECK_LE(img_err, 0.5f / 255.0f + 1e-6f);  // 8-bit quantization only
    }

    // manifest carries the full config; parsing it back reproduces the setup
    std::ifstream mf(da + "/manifest.json");
    nlohmann::json manifest = nlohmann::json::parse(mf);
    CHECK_EQ(manifest.at("version").get<int>(), 1);
    CHECK_EQ(manifest.at("seed").get<std::uint64_t>(), 9);
    CHECK_EQ(manifest.at("samples").size(), 3);
    GenConfig echo = gen_config_from_json(manifest.at("config"));
    CHECK_EQ(echo.width, 48);
    CHECK_EQ(echo.count, 3);
    CHECK_EQ(echo.seed, 9);
    CHECK_EQ(echo.root_jitter, 2.0f);

    CHECK_THROWS_AS(load_dataset(tmp.str("missing")), Error);
}

TEST_CASE("generation rejects configs whose motion exceeds the frame budget") {
    Skeleton sk = Skeleton::humanoid();
    GenConfig config;
    config.max_root_delta = 40.0f;  // far past width/4
    CHECK_THROWS_AS(config.validate(sk), ConfigError);
    GenConfig small;
    small.width = small.height = 4;
    CHECK_THROWS_AS(small.validate(sk), ConfigError);
}
