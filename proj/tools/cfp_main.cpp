// cfp — command-line front end over the CFP blocks: seeded tensor generation,
// pyramid forward passes, parameter/FLOP reports, gradient verification, and
// latency micro-benchmarks. All tensors travel through the CFT1 binary
// container; see the project README for formats.
//
// Exit codes: 0 success, 1 usage, 2 I/O or format problem, 3 numeric failure
// (NaN/Inf or a failed gradient check). Every failure prints exactly one
// machine-parsable line to stderr: "error: <kind>: <message>".

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cfp/analysis.hpp"
#include "cfp/config.hpp"
#include "cfp/evc.hpp"
#include "cfp/gcr.hpp"
#include "cfp/tensor_file.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliUsageError : cfp::Error {
    explicit CliUsageError(const std::string& msg) : Error(msg) {}
};

cfp::Shape parse_shape(const std::string& text) {
    cfp::Shape shape;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            long v = std::stol(item, &used);
            if (used != item.size() || v < 1) throw std::invalid_argument(item);
            shape.push_back(v);
        } catch (const std::exception&) {
            throw CliUsageError("bad shape component '" + item + "' in '" + text + "'");
        }
    }
    if (shape.empty()) throw CliUsageError("empty shape '" + text + "'");
    return shape;
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(item);
    return out;
}

cfp::io::RunConfig load_config_opt(const std::string& path) {
    if (path.empty()) return {};
    return cfp::io::load_config(path);
}

std::string shape_x(const cfp::Shape& s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += 'x';
        out += std::to_string(s[i]);
    }
    return out;
}

// Levels are assigned so the last input is the deepest level (index 4).
std::vector<int> assign_levels(std::size_t n) {
    if (n < 1 || n > 5) throw CliUsageError("expected between 1 and 5 input tensors, got " + std::to_string(n));
    std::vector<int> levels;
    for (std::size_t i = 0; i < n; ++i) levels.push_back(static_cast<int>(5 - n + i));
    return levels;
}

// Pyramid level shapes derived from the deepest-level shape: going shallower
// doubles the spatial size and halves the channel count.
cfp::analysis::LevelShapes derive_level_shapes(const cfp::Shape& deepest, const std::vector<int>& levels) {
    cfp::analysis::LevelShapes out;
    for (int lvl : levels) {
        int up = 4 - lvl;
        cfp::Shape s = deepest;
        std::int64_t div = 1ll << up;
        if (s[1] % div != 0)
            throw cfp::ConfigError("deepest channel count " + std::to_string(s[1]) +
                                   " not divisible by " + std::to_string(div) + " for level " +
                                   std::to_string(lvl));
        s[1] /= div;
        s[2] *= div;
        s[3] *= div;
        out.emplace_back(lvl, std::move(s));
    }
    return out;
}

cfp::Tensor seeded_tensor(const cfp::Shape& shape, std::uint64_t seed) {
    cfp::Tensor t(shape);
    cfp::Rng rng(seed);
    rng.fill_uniform(t.data(), -1.0, 1.0);
    return t;
}

int run_gen(const std::string& shape_text, std::uint64_t seed, const std::string& out) {
    cfp::Tensor t = seeded_tensor(parse_shape(shape_text), seed);
    cfp::io::write_tensor(out, t);
    std::cout << "wrote " << out << " shape " << shape_x(t.shape()) << " seed " << seed << "\n";
    return 0;
}

int run_forward(const std::string& config_path, const std::string& inputs_text, const std::string& out_dir,
                const std::string& params_path, const std::string& save_params_path) {
    cfp::io::RunConfig cfg = load_config_opt(config_path);

    std::vector<std::string> files = split_list(inputs_text);
    std::vector<int> levels = assign_levels(files.size());

    cfp::gcr::Pyramid pyr;
    for (std::size_t i = 0; i < files.size(); ++i)
        pyr.levels.push_back({levels[i], cfp::io::read_tensor(files[i])});
    cfp::gcr::validate_pyramid(pyr);

    cfp::gcr::LevelChannels channels;
    for (const auto& l : pyr.levels) channels.emplace_back(l.index, static_cast<int>(l.feature.dim(1)));

    cfp::Rng rng(cfg.seed);
    cfp::gcr::GcrConfig gcr_cfg = cfg.gcr_config();
    cfp::gcr::CfpParams params = cfp::gcr::make_cfp(channels, cfg.evc_config(), gcr_cfg, rng);
    cfp::ModuleParams tree = cfp::gcr::collect_cfp(params);
    if (!params_path.empty()) cfp::io::load_params(params_path, tree);
    if (!save_params_path.empty()) cfp::io::save_params(save_params_path, tree);

    cfp::gcr::Pyramid out = cfp::gcr::cfp_forward(pyr, params, gcr_cfg, cfg.mode, &rng);

    fs::create_directories(out_dir);
    std::ostringstream summary;
    summary << "inputs: " << files.size() << '\n';
    for (std::size_t i = 0; i < pyr.levels.size(); ++i)
        summary << "level" << pyr.levels[i].index << ".in.shape: " << shape_x(pyr.levels[i].feature.shape())
                << '\n';
    for (const auto& l : out.levels) {
        std::string name = "level" + std::to_string(l.index) + ".cft";
        cfp::io::write_tensor(fs::path(out_dir) / name, l.feature);
        summary << "level" << l.index << ".out.shape: " << shape_x(l.feature.shape()) << '\n';
        summary << "level" << l.index << ".out.file: " << name << '\n';
    }
    summary << "params.trainable: " << tree.trainable_count() << '\n';
    summary << "params.buffers: " << tree.buffer_count() << '\n';
    cfp::io::write_text_file(fs::path(out_dir) / "summary.txt", summary.str());
    cfp::io::write_text_file(fs::path(out_dir) / "effective.cfg", cfp::io::serialize_config(cfg));
    std::cout << "wrote " << out.levels.size() << " levels to " << out_dir << "\n";
    return 0;
}

int run_stats(const std::string& config_path, const std::string& shape_text, const std::string& format) {
    cfp::io::RunConfig cfg = load_config_opt(config_path);
    cfp::Shape deepest = parse_shape(shape_text);
    if (deepest.size() != 4) throw CliUsageError("--input-shape must be B,C,H,W");

    std::vector<int> levels = cfg.gcr_levels;
    levels.push_back(4);
    std::sort(levels.begin(), levels.end());
    cfp::analysis::LevelShapes shapes = derive_level_shapes(deepest, levels);

    cfp::gcr::LevelChannels channels;
    for (const auto& [lvl, s] : shapes) channels.emplace_back(lvl, static_cast<int>(s[1]));

    cfp::Rng rng(cfg.seed);
    cfp::gcr::GcrConfig gcr_cfg = cfg.gcr_config();
    cfp::gcr::CfpParams params = cfp::gcr::make_cfp(channels, cfg.evc_config(), gcr_cfg, rng);
    cfp::ModuleParams tree = cfp::gcr::collect_cfp(params);

    cfp::analysis::CostReport report = cfp::analysis::merge_cost(
        cfp::analysis::count_params(tree), cfp::analysis::count_cfp_flops(params, gcr_cfg, shapes));

    if (format == "json") {
        json j;
        j["flop_convention"] = "1 MAC = 2 FLOPs; biases and normalizations counted";
        j["params"] = report.params;
        j["buffers"] = report.buffers;
        j["flops"] = report.flops;
        j["breakdown"] = json::array();
        for (const auto& l : report.breakdown)
            j["breakdown"].push_back({{"name", l.name}, {"params", l.params}, {"buffers", l.buffers},
                                      {"flops", l.flops}});
        std::cout << j.dump(2) << "\n";
    } else {
        std::cout << report.to_text();
    }
    return 0;
}

int run_gradcheck(const std::string& config_path, double tol, double step, const std::string& seeds_text) {
    (void)load_config_opt(config_path); // validated for consistency with the other subcommands
    std::vector<std::uint64_t> seeds;
    for (const std::string& s : split_list(seeds_text)) {
        try {
            seeds.push_back(std::stoull(s));
        } catch (const std::exception&) {
            throw CliUsageError("bad seed '" + s + "'");
        }
    }
    if (seeds.empty()) throw CliUsageError("no seeds given");
    cfp::analysis::GradSuiteReport suite = cfp::analysis::grad_check_suite(seeds, tol, step);
    std::cout << suite.to_text();
    if (!suite.pass) throw cfp::NumericError("gradient check failed");
    return 0;
}

int run_bench(const std::string& config_path, const std::string& shape_text, int iters, int warmup) {
    cfp::io::RunConfig cfg = load_config_opt(config_path);
    cfp::Shape deepest = parse_shape(shape_text);
    if (deepest.size() != 4) throw CliUsageError("--input-shape must be B,C,H,W");
    if (iters < 1) throw CliUsageError("--iters must be >= 1");

    std::vector<int> levels = cfg.gcr_levels;
    levels.push_back(4);
    std::sort(levels.begin(), levels.end());
    cfp::analysis::LevelShapes shapes = derive_level_shapes(deepest, levels);

    cfp::gcr::LevelChannels channels;
    for (const auto& [lvl, s] : shapes) channels.emplace_back(lvl, static_cast<int>(s[1]));

    cfp::Rng rng(cfg.seed);
    cfp::gcr::GcrConfig gcr_cfg = cfg.gcr_config();
    cfp::gcr::CfpParams params = cfp::gcr::make_cfp(channels, cfg.evc_config(), gcr_cfg, rng);

    cfp::gcr::Pyramid pyr;
    std::uint64_t tensor_seed = cfg.seed + 1;
    for (const auto& [lvl, s] : shapes) pyr.levels.push_back({lvl, seeded_tensor(s, tensor_seed++)});

    const cfp::Tensor& x4 = pyr.levels.back().feature;
    auto evc_stats = cfp::analysis::bench_latency(
        [&] {
            cfp::EvalCtx<float> cx;
            (void)cfp::evc::evc_forward(cx, cx.use(x4), params.evc);
        },
        warmup, iters);
    auto cfp_stats = cfp::analysis::bench_latency(
        [&] { (void)cfp::gcr::cfp_forward(pyr, params, gcr_cfg); }, warmup, iters);

    auto row = [](const char* name, const cfp::analysis::LatencyStats& st) {
        std::printf("%-12s mean %10.4f ms   p50 %10.4f ms   p95 %10.4f ms   (%d iters)\n", name, st.mean_ms,
                    st.p50_ms, st.p95_ms, st.iters);
    };
    std::printf("input %s, warmup %d\n", shape_x(deepest).c_str(), warmup);
    row("evc", evc_stats);
    row("cfp", cfp_stats);
    return 0;
}

std::string one_line(std::string msg) {
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    return msg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Centralized feature pyramid blocks: tensors, forwards, stats, checks"};
    app.require_subcommand(1);

    std::string shape_text, out_path, config_path, inputs_text, out_dir, params_path, save_params_path;
    std::string format = "text", seeds_text = "1,2,3";
    std::uint64_t seed = 0;
    double tol = 1e-3, step = 1e-3;
    int iters = 30, warmup = 5;

    auto* gen = app.add_subcommand("gen", "Write a deterministic seeded random tensor");
    gen->add_option("--shape", shape_text, "Tensor shape, e.g. 1,1024,8,8")->required();
    gen->add_option("--seed", seed, "RNG seed");
    gen->add_option("--out", out_path, "Output .cft file")->required();

    auto* fwd = app.add_subcommand("forward", "Run the full pyramid forward pass");
    fwd->add_option("--config", config_path, "Config file (key=value lines)");
    fwd->add_option("--inputs", inputs_text, "Comma list of input tensors, shallowest first; last is X4")
        ->required();
    fwd->add_option("--out-dir", out_dir, "Output directory")->required();
    fwd->add_option("--params", params_path, "Load parameters from a .cfp container");
    fwd->add_option("--save-params", save_params_path, "Save the effective parameters");

    auto* stats = app.add_subcommand("stats", "Print the parameter/FLOP report");
    stats->add_option("--config", config_path, "Config file");
    stats->add_option("--input-shape", shape_text, "Deepest-level input shape B,C,H,W")->required();
    stats->add_option("--format", format, "text or json")->check(CLI::IsMember({"text", "json"}));

    auto* gc = app.add_subcommand("gradcheck", "Run the finite-difference gradient suite");
    gc->add_option("--config", config_path, "Config file");
    gc->add_option("--tol", tol, "Max relative error");
    gc->add_option("--step", step, "Finite-difference step");
    gc->add_option("--seeds", seeds_text, "Comma list of seeds");

    auto* bench = app.add_subcommand("bench", "Measure forward latency");
    bench->add_option("--config", config_path, "Config file");
    bench->add_option("--input-shape", shape_text, "Deepest-level input shape B,C,H,W")
        ->default_val("1,1024,8,8");
    bench->add_option("--iters", iters, "Timed iterations");
    bench->add_option("--warmup", warmup, "Discarded warmup iterations");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        std::cerr << "error: usage: " << one_line(e.what()) << "\n";
        return 1;
    }

    try {
        if (gen->parsed()) return run_gen(shape_text, seed, out_path);
        if (fwd->parsed()) return run_forward(config_path, inputs_text, out_dir, params_path, save_params_path);
        if (stats->parsed()) return run_stats(config_path, shape_text, format);
        if (gc->parsed()) return run_gradcheck(config_path, tol, step, seeds_text);
        if (bench->parsed()) return run_bench(config_path, shape_text, iters, warmup);
        std::cerr << "error: usage: no subcommand\n";
        return 1;
    } catch (const CliUsageError& e) {
        std::cerr << "error: usage: " << one_line(e.what()) << "\n";
        return 1;
    } catch (const cfp::NumericError& e) {
        std::cerr << "error: numeric: " << one_line(e.what()) << "\n";
        return 3;
    } catch (const cfp::ConfigError& e) {
        std::cerr << "error: config: " << one_line(e.what()) << "\n";
        return 2;
    } catch (const cfp::FormatError& e) {
        std::cerr << "error: format: " << one_line(e.what()) << "\n";
        return 2;
    } catch (const cfp::ShapeError& e) {
        std::cerr << "error: shape: " << one_line(e.what()) << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << one_line(e.what()) << "\n";
        return 2;
    }
}
