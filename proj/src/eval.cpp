#include "pyraflow/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "pyraflow/error.hpp"
#include "pyraflow/flowio.hpp"
#include "pyraflow/parallel.hpp"
#include "pyraflow/rng.hpp"

namespace pyraflow {

namespace {

struct Accumulator {
    double sum = 0.0;
    std::int64_t count = 0;
    std::int64_t outliers = 0;
    std::map<int, SegmentStat> segments;  // mean_epe holds the sum until finish
    std::vector<float> epes;

    void add(const FlowField& pred, const Sample& s) {
        if (!pred.same_shape(s.flow))
            throw DataError("prediction for sample " + s.id +
                            " does not match ground-truth resolution");
        const float* pu = pred.plane(0);
        const float* pv = pred.plane(1);
        const float* gu = s.flow.plane(0);
        const float* gv = s.flow.plane(1);
        const float* mk = s.mask.plane(0);
        const int n = pred.height() * pred.width();
        for (int i = 0; i < n; ++i) {
            if (mk[i] < 0.5f) continue;
            const double e =
                std::hypot(double(pu[i]) - gu[i], double(pv[i]) - gv[i]);
            sum += e;
            ++count;
            if (e > kOutlierThresholdPx) ++outliers;
            auto& seg = segments[s.segmap[i]];
            seg.mean_epe += e;
            ++seg.pixels;
            epes.push_back(static_cast<float>(e));
        }
    }

    EpeReport finish(int samples) {
        if (count == 0) throw DataError("no valid pixels to evaluate");
        EpeReport r;
        r.mean = sum / count;
        r.outlier_fraction = static_cast<double>(outliers) / count;
        const std::size_t lo = (epes.size() - 1) / 2, hi = epes.size() / 2;
        std::nth_element(epes.begin(), epes.begin() + lo, epes.end());
        const double a = epes[lo];
        std::nth_element(epes.begin(), epes.begin() + hi, epes.end());
        r.median = (a + epes[hi]) / 2.0;
        for (auto& [id, seg] : segments)
            r.per_segment[id] = {seg.mean_epe / seg.pixels, seg.pixels};
        r.sample_count = samples;
        return r;
    }
};

}  // namespace

EpeReport evaluate(const PyramidNet& net, const Dataset& dataset) {
    if (dataset.samples.empty()) throw DataError("dataset is empty");
    Accumulator acc;
    for (const Sample& s : dataset.samples) {
        const auto flows = forward(net, s.image1, s.image2);
        acc.add(flows[0], s);
    }
    return acc.finish(static_cast<int>(dataset.samples.size()));
}

EpeReport evaluate(const std::string& pred_dir, const Dataset& dataset) {
    if (dataset.samples.empty()) throw DataError("dataset is empty");
    Accumulator acc;
    for (const Sample& s : dataset.samples)
        acc.add(read_flo(pred_dir + "/" + s.id + ".flo"), s);
    return acc.finish(static_cast<int>(dataset.samples.size()));
}

std::vector<std::pair<std::string, double>> per_sample_epe(const PyramidNet& net,
                                                           const Dataset& dataset) {
    std::vector<std::pair<std::string, double>> rows;
    rows.reserve(dataset.samples.size());
    for (const Sample& s : dataset.samples) {
        const auto flows = forward(net, s.image1, s.image2);
        Accumulator acc;
        acc.add(flows[0], s);
        if (acc.count == 0) throw DataError("sample " + s.id + " has no valid pixels");
        rows.emplace_back(s.id, acc.sum / acc.count);
    }
    return rows;
}

std::vector<std::pair<std::string, double>> per_sample_epe(const std::string& pred_dir,
                                                           const Dataset& dataset) {
    std::vector<std::pair<std::string, double>> rows;
    rows.reserve(dataset.samples.size());
    for (const Sample& s : dataset.samples) {
        Accumulator acc;
        acc.add(read_flo(pred_dir + "/" + s.id + ".flo"), s);
        if (acc.count == 0) throw DataError("sample " + s.id + " has no valid pixels");
        rows.emplace_back(s.id, acc.sum / acc.count);
    }
    return rows;
}

EpeReport zero_flow_baseline(const Dataset& dataset) {
    if (dataset.samples.empty()) throw DataError("dataset is empty");
    Accumulator acc;
    for (const Sample& s : dataset.samples) {
        const FlowField zero(2, s.flow.height(), s.flow.width(), 0.0f);
        acc.add(zero, s);
    }
    return acc.finish(static_cast<int>(dataset.samples.size()));
}

BenchReport bench_inference(const PyramidNet& net, int height, int width,
                            int warmup, int iters, bool parallel) {
    if (iters < 1) throw ConfigError("bench needs iters >= 1");
    if (warmup < 0) throw ConfigError("bench warmup must be >= 0");

    PyramidNet bench_net = net;
    bench_net.config.base_h = height;
    bench_net.config.base_w = width;
    bench_net.config.validate();

    Rng rng(stream_seed(0xBE9Cull, height, width));
    Tensor img1(3, height, width), img2(3, height, width);
    for (float& v : img1.flat()) v = rng.unit();
    for (float& v : img2.flat()) v = rng.unit();

    const int saved_threads = max_threads();
    if (!parallel) set_max_threads(1);

    using Clock = std::chrono::steady_clock;
    std::vector<double> ms;
    ms.reserve(iters);
    try {
        for (int i = 0; i < warmup; ++i) forward(bench_net, img1, img2);
        for (int i = 0; i < iters; ++i) {
            const auto t0 = Clock::now();
            forward(bench_net, img1, img2);
            ms.push_back(
                std::chrono::duration<double, std::milli>(Clock::now() - t0).count());
        }
    } catch (...) {
        set_max_threads(saved_threads);
        throw;
    }
    set_max_threads(saved_threads);

    std::vector<double> sorted = ms;
    std::sort(sorted.begin(), sorted.end());
    double sum = 0.0;
    for (double v : ms) sum += v;

    BenchReport r;
    r.height = height;
    r.width = width;
    r.warmup = warmup;
    r.iters = iters;
    r.parallel = parallel;
    r.mean_ms = sum / iters;
    r.p50_ms = sorted[static_cast<std::size_t>(std::llround(0.5 * (iters - 1)))];
    r.p95_ms = sorted[static_cast<std::size_t>(std::llround(0.95 * (iters - 1)))];
    r.fps = 1000.0 / r.mean_ms;
    return r;
}

}  // namespace pyraflow
