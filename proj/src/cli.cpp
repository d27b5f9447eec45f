#include "pyraflow/cli.hpp"

#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "pyraflow/checkpoint.hpp"
#include "pyraflow/config_json.hpp"
#include "pyraflow/error.hpp"
#include "pyraflow/eval.hpp"
#include "pyraflow/flowio.hpp"
#include "pyraflow/synth.hpp"
#include "pyraflow/train.hpp"

using nlohmann::json;

namespace pyraflow {

namespace {

// Reference figures of the original full-scale model, printed for context
// next to measured values; hardware- and scale-dependent, never asserted.
constexpr double kReferenceLatencyMs = 31.0;
constexpr double kReferenceFps = 32.0;
constexpr long kReferenceParams = 4200000;
constexpr double kReferenceCheckpointMb = 7.8;

struct BenchOptions {
    int warmup = 5;
    int iters = 50;
    int height = 0;  // 0: model base resolution
    int width = 0;
    bool parallel = false;
};

int get_int_field(const json& j, const char* key, int fallback, const std::string& where) {
    if (!j.contains(key)) return fallback;
    if (!j[key].is_number_integer())
        throw ConfigError(where + "." + key + " must be an integer");
    return j[key].get<int>();
}

struct FullConfig {
    GenConfig gen;
    PyramidConfig model = PyramidConfig::defaults();
    TrainConfig train;
    BenchOptions bench;
};

FullConfig load_config(const std::string& path) {
    json doc = json::object();
    if (!path.empty()) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open " + path);
        try {
            in >> doc;
        } catch (const json::exception& e) {
            throw FormatError("bad config json: " + std::string(e.what()));
        }
    }
    if (!doc.is_object()) throw ConfigError("config must be a JSON object");
    reject_unknown_keys(doc, {"gen", "model", "train", "eval", "bench"}, "config");

    FullConfig c;
    if (doc.contains("gen")) c.gen = gen_config_from_json(doc["gen"]);
    if (doc.contains("model")) c.model = model_config_from_json(doc["model"]);
    if (doc.contains("train")) c.train = train_config_from_json(doc["train"]);
    if (doc.contains("eval")) {
        if (!doc["eval"].is_object()) throw ConfigError("eval must be a JSON object");
        reject_unknown_keys(doc["eval"], {}, "eval");
    }
    if (doc.contains("bench")) {
        const json& b = doc["bench"];
        if (!b.is_object()) throw ConfigError("bench must be a JSON object");
        reject_unknown_keys(b, {"warmup", "iters", "height", "width", "parallel"},
                            "bench");
        c.bench.warmup = get_int_field(b, "warmup", c.bench.warmup, "bench");
        c.bench.iters = get_int_field(b, "iters", c.bench.iters, "bench");
        c.bench.height = get_int_field(b, "height", c.bench.height, "bench");
        c.bench.width = get_int_field(b, "width", c.bench.width, "bench");
        if (b.contains("parallel")) {
            if (!b["parallel"].is_boolean())
                throw ConfigError("bench.parallel must be a boolean");
            c.bench.parallel = b["parallel"].get<bool>();
        }
    }
    return c;
}

json epoch_to_json(const EpochStats& st) {
    return {{"level", st.level},
            {"epoch", st.epoch},
            {"train_loss", st.train_loss},
            {"val_epe", st.val_epe},
            {"wall_ms", st.wall_ms}};
}

json report_to_json(const EpeReport& r) {
    json segs = json::object();
    for (const auto& [id, seg] : r.per_segment)
        segs[std::to_string(id)] = {{"mean_epe", seg.mean_epe},
                                    {"pixels", seg.pixels}};
    return {{"mean_epe", r.mean},
            {"median_epe", r.median},
            {"outlier_fraction", r.outlier_fraction},
            {"sample_count", r.sample_count},
            {"per_segment", segs}};
}

// Loads a checkpoint, re-targeting the model to (h, w) when given.
PyramidNet load_net(const std::string& ckpt, int h = 0, int w = 0) {
    auto [net, meta] = load_checkpoint(ckpt);
    if (h > 0 && w > 0 && (h != net.config.base_h || w != net.config.base_w)) {
        net.config.base_h = h;
        net.config.base_w = w;
        net.config.validate();
    }
    return std::move(net);
}

int run_gen(const std::string& config_path, const std::string& out_dir) {
    const FullConfig cfg = load_config(config_path);
    std::cerr << "generating " << cfg.gen.count << " samples into " << out_dir << "\n";
    generate_dataset(cfg.gen, out_dir);
    std::cout << json{{"out", out_dir}, {"count", cfg.gen.count}}.dump() << "\n";
    return 0;
}

int run_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_ckpt, const std::string& history_path) {
    const FullConfig cfg = load_config(config_path);
    std::cerr << "loading dataset " << data_dir << "\n";
    const Dataset dataset = load_dataset(data_dir);

    PyramidNet net = init_net(cfg.model);
    std::optional<std::ofstream> history_file;
    if (!history_path.empty()) {
        history_file.emplace(history_path, std::ios::trunc);
        if (!*history_file)
            throw IoError("cannot open " + history_path + " for writing");
    }
    const auto on_epoch = [&](const EpochStats& st) {
        const std::string line = epoch_to_json(st).dump();
        std::cerr << line << "\n";
        if (history_file) *history_file << line << "\n";
    };

    const auto history = train(net, dataset, cfg.train, on_epoch);

    CheckpointMeta meta;
    if (!history.empty()) {
        meta.epoch = static_cast<std::uint32_t>(history.back().epoch);
        meta.level = history.back().level;
        meta.train_loss = history.back().train_loss;
        meta.val_epe = history.back().val_epe;
    }
    save_checkpoint(net, meta, out_ckpt);

    const std::size_t params = count_params(net);
    const std::size_t bytes = checkpoint_size_bytes(net);
    std::cerr << "params " << params << " (reference full-scale model: "
              << kReferenceParams << "); checkpoint " << bytes
              << " bytes (reference: " << kReferenceCheckpointMb << " MB)\n";
    json summary{{"checkpoint", out_ckpt},
                 {"params", params},
                 {"checkpoint_bytes", bytes},
                 {"epochs", history.size()},
                 {"reference_params", kReferenceParams},
                 {"reference_checkpoint_mb", kReferenceCheckpointMb},
                 {"reference_note",
                  "full-scale reference model figures, shown for context only"}};
    if (!history.empty()) {
        summary["final_train_loss"] = history.back().train_loss;
        summary["final_val_epe"] = history.back().val_epe;
    }
    std::cout << summary.dump() << "\n";
    return 0;
}

int run_infer(const std::string& ckpt, const std::string& img1_path,
              const std::string& img2_path, const std::string& out_flo) {
    const Tensor img1 = read_ppm(img1_path);
    const Tensor img2 = read_ppm(img2_path);
    if (!img1.same_shape(img2)) throw DataError("input images differ in size");
    const PyramidNet net = load_net(ckpt, img1.height(), img1.width());
    const auto flows = forward(net, img1, img2);
    write_flo(out_flo, flows[0]);
    std::cout << json{{"out", out_flo}}.dump() << "\n";
    return 0;
}

int run_eval(const std::string& ckpt, const std::string& pred_dir,
             const std::string& data_dir, const std::string& csv_path) {
    const Dataset dataset = load_dataset(data_dir);
    EpeReport report;
    std::vector<std::pair<std::string, double>> rows;
    if (!ckpt.empty()) {
        const PyramidNet net = load_net(ckpt);
        report = evaluate(net, dataset);
        if (!csv_path.empty()) rows = per_sample_epe(net, dataset);
    } else {
        report = evaluate(pred_dir, dataset);
        if (!csv_path.empty()) rows = per_sample_epe(pred_dir, dataset);
    }
    if (!csv_path.empty()) {
        std::ofstream csv(csv_path, std::ios::trunc);
        if (!csv) throw IoError("cannot open " + csv_path + " for writing");
        csv << "id,mean_epe\n";
        for (const auto& [id, epe] : rows) csv << id << "," << epe << "\n";
        if (!csv) throw IoError("write failed for " + csv_path);
    }
    std::cout << report_to_json(report).dump() << "\n";
    return 0;
}

int run_bench(const std::string& ckpt, const BenchOptions& opt) {
    const PyramidNet net = load_net(ckpt);
    const int h = opt.height > 0 ? opt.height : net.config.base_h;
    const int w = opt.width > 0 ? opt.width : net.config.base_w;
    const BenchReport r = bench_inference(net, h, w, opt.warmup, opt.iters,
                                          opt.parallel);
    std::cerr << "measured " << r.mean_ms << " ms/frame (" << r.fps
              << " fps); reference full-scale model: " << kReferenceLatencyMs
              << " ms (" << kReferenceFps << " fps), not asserted\n";
    json out{{"height", r.height},
             {"width", r.width},
             {"warmup", r.warmup},
             {"iters", r.iters},
             {"parallel", r.parallel},
             {"mean_ms", r.mean_ms},
             {"p50_ms", r.p50_ms},
             {"p95_ms", r.p95_ms},
             {"fps", r.fps},
             {"reference_ms", kReferenceLatencyMs},
             {"reference_fps", kReferenceFps},
             {"reference_note",
              "full-scale reference model on its original hardware, shown for "
              "context only"}};
    std::cout << out.dump() << "\n";
    return 0;
}

int run_viz(const std::string& flo_path, const std::string& out_ppm, float max_norm) {
    const FlowField flow = read_flo(flo_path);
    write_ppm(out_ppm, flow_to_color(flow, max_norm));
    std::cout << json{{"out", out_ppm}}.dump() << "\n";
    return 0;
}

}  // namespace

int cli_main(int argc, char** argv) {
    CLI::App app{"pyraflow: coarse-to-fine spatial-pyramid optical flow on synthetic "
                 "articulated figures"};
    app.require_subcommand(1);
    app.footer("Environment: PYRAFLOW_THREADS caps internal parallelism.");

    std::string config_path, out_path, data_dir, ckpt, pred_dir, img1, img2, flo;
    std::string history_path, csv_path;
    float max_norm = 0.0f;
    BenchOptions bench_flags;

    auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
    gen->add_option("--config", config_path, "JSON config file");
    gen->add_option("--out", out_path, "output dataset directory")->required();

    auto* train_cmd = app.add_subcommand("train", "train a model on a dataset");
    train_cmd->add_option("--config", config_path, "JSON config file");
    train_cmd->add_option("--data", data_dir, "dataset directory")->required();
    train_cmd->add_option("--out", out_path, "output checkpoint path")->required();
    train_cmd->add_option("--history", history_path, "JSONL per-epoch history file");

    auto* infer = app.add_subcommand("infer", "estimate flow for one image pair");
    infer->add_option("--ckpt", ckpt, "checkpoint path")->required();
    infer->add_option("--img1", img1, "first frame (PPM)")->required();
    infer->add_option("--img2", img2, "second frame (PPM)")->required();
    infer->add_option("--out", out_path, "output .flo path")->required();

    auto* eval_cmd = app.add_subcommand("eval", "score a model or predictions");
    eval_cmd->add_option("--ckpt", ckpt, "checkpoint path");
    eval_cmd->add_option("--pred", pred_dir, "directory of <id>.flo predictions");
    eval_cmd->add_option("--data", data_dir, "dataset directory")->required();
    eval_cmd->add_option("--csv", csv_path, "per-sample EPE table output");

    auto* bench = app.add_subcommand("bench", "measure inference latency");
    bench->add_option("--config", config_path, "JSON config file");
    bench->add_option("--ckpt", ckpt, "checkpoint path")->required();
    bench->add_option("--warmup", bench_flags.warmup, "warmup iterations")
        ->check(CLI::NonNegativeNumber);
    bench->add_option("--iters", bench_flags.iters, "timed iterations")
        ->check(CLI::PositiveNumber);
    bench->add_option("--height", bench_flags.height, "input height");
    bench->add_option("--width", bench_flags.width, "input width");
    bench->add_flag("--parallel", bench_flags.parallel,
                    "allow multi-threaded kernels in the timed region");

    auto* viz = app.add_subcommand("viz", "render a .flo file to a color PPM");
    viz->add_option("--flo", flo, "input .flo path")->required();
    viz->add_option("--out", out_path, "output PPM path")->required();
    viz->add_option("--max-norm", max_norm,
                    "saturation magnitude (default: 99th percentile)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: usage: " << e.what() << "\n";
        return 1;
    }

    try {
        if (gen->parsed()) return run_gen(config_path, out_path);
        if (train_cmd->parsed())
            return run_train(config_path, data_dir, out_path, history_path);
        if (infer->parsed()) return run_infer(ckpt, img1, img2, out_path);
        if (eval_cmd->parsed()) {
            if (ckpt.empty() == pred_dir.empty())
                throw UsageError("eval needs exactly one of --ckpt or --pred");
            return run_eval(ckpt, pred_dir, data_dir, csv_path);
        }
        if (bench->parsed()) {
            BenchOptions opt = load_config(config_path).bench;
            if (bench->count("--warmup")) opt.warmup = bench_flags.warmup;
            if (bench->count("--iters")) opt.iters = bench_flags.iters;
            if (bench->count("--height")) opt.height = bench_flags.height;
            if (bench->count("--width")) opt.width = bench_flags.width;
            if (bench->count("--parallel")) opt.parallel = bench_flags.parallel;
            return run_bench(ckpt, opt);
        }
        if (viz->parsed()) return run_viz(flo, out_path, max_norm);
        throw UsageError("no subcommand given");
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        if (e.kind() == "usage") return 1;
        if (e.kind() == "numeric") return 3;
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace pyraflow
