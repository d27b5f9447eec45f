#pragma once

#include <map>
#include <string>
#include <vector>

#include "pyraflow/pyramid.hpp"
#include "pyraflow/synth.hpp"

namespace pyraflow {

struct SegmentStat {
    double mean_epe = 0.0;
    std::int64_t pixels = 0;
};

struct EpeReport {
    double mean = 0.0;    // px, over all valid pixels of all samples
    double median = 0.0;  // px, pooled pixels
    double outlier_fraction = 0.0;  // EPE > 3 px among valid pixels
    std::map<int, SegmentStat> per_segment;  // key -1 = background
    int sample_count = 0;
};

constexpr float kOutlierThresholdPx = 3.0f;

// Runs the net on every sample and scores against ground truth over
// valid_mask = 1 pixels.
EpeReport evaluate(const PyramidNet& net, const Dataset& dataset);

// Same scoring, predictions read from pred_dir/<id>.flo instead.
EpeReport evaluate(const std::string& pred_dir, const Dataset& dataset);

// Per-sample mean EPE rows for the --csv output, in dataset order.
std::vector<std::pair<std::string, double>> per_sample_epe(const PyramidNet& net,
                                                           const Dataset& dataset);
std::vector<std::pair<std::string, double>> per_sample_epe(const std::string& pred_dir,
                                                           const Dataset& dataset);

EpeReport zero_flow_baseline(const Dataset& dataset);

struct BenchReport {
    int height = 0, width = 0;
    int warmup = 0, iters = 0;
    bool parallel = false;
    double mean_ms = 0.0, p50_ms = 0.0, p95_ms = 0.0;
    double fps = 0.0;  // 1000 / mean_ms
};

// Times forward() alone on a fixed random pair; warmup iterations are
// excluded. Single-threaded unless parallel is set.
BenchReport bench_inference(const PyramidNet& net, int height, int width,
                            int warmup, int iters, bool parallel = false);

}  // namespace pyraflow
