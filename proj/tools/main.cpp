#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "common.hpp"
#include "tcbm/io.hpp"
#include "tcbm/pipeline.hpp"

using namespace tcbm;

namespace {

const char* kUsage =
    "usage: tcbm <command> [--config <file>] [--<key> <value> ...]\n"
    "\n"
    "commands:\n"
    "  gen-data   write a synthetic bouncing-dot dataset (.tcds)\n"
    "  verify     run the closed-form-vs-oracle check suite\n"
    "  train      train the clean-data predictor (.tcvb checkpoint)\n"
    "  sample     posterior-sampling inference over a dataset's validation split\n"
    "  metrics    PSNR/SSIM between a generated and a reference dataset (.csv)\n"
    "  sweep      train+evaluate over an eps x alpha grid (.csv)\n"
    "\n"
    "keys mirror the config file; command-line values override the file.\n";

double parse_double(const std::string& key, const std::string& raw) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(raw, &pos);
        if (pos != raw.size()) throw std::invalid_argument(raw);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': not a number: '" + raw + "'");
    }
}

}  // namespace

const std::set<std::string>& RunConfig::known_keys() {
    static const std::set<std::string> keys = {
        // prior / method
        "task", "n_frames", "feature_dim", "eps", "alpha", "schedule", "horizon", "coupling",
        "sr_factor",
        // training
        "steps", "batch", "lr", "betas", "weight_decay", "ema", "seed", "val_count", "hidden",
        "temb_width",
        // inference / metrics
        "n_sample_steps", "count",
        // oracle
        "paths", "dt", "corrupt",
        // dataset generation
        "speed_min", "speed_max", "width_min", "width_max",
        // sweep
        "eps_grid", "alpha_grid",
        // file paths
        "config", "data", "out", "model", "ref", "gen", "strips", "loss_out", "ref_out"};
    return keys;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    if (!known_keys().count(key)) throw ConfigError("unknown key: " + key);
    values[key] = value;
}

void RunConfig::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const auto begin = line.find_first_not_of(" \t\r");
        if (begin == std::string::npos) continue;
        const auto end = line.find_last_not_of(" \t\r");
        line = line.substr(begin, end - begin + 1);
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
        std::string key = line.substr(0, eq);
        std::string value = line.substr(eq + 1);
        if (const auto kend = key.find_last_not_of(" \t"); kend != std::string::npos)
            key = key.substr(0, kend + 1);
        if (const auto vbegin = value.find_first_not_of(" \t"); vbegin != std::string::npos)
            value = value.substr(vbegin);
        else
            value.clear();
        set(key, value);
    }
}

std::string RunConfig::str(const std::string& key, const std::string& fallback) const {
    const auto it = values.find(key);
    return it == values.end() ? fallback : it->second;
}

std::string RunConfig::require(const std::string& key) const {
    const auto it = values.find(key);
    if (it == values.end()) throw ConfigError("missing required key: " + key);
    return it->second;
}

double RunConfig::num(const std::string& key, double fallback) const {
    const auto it = values.find(key);
    return it == values.end() ? fallback : parse_double(key, it->second);
}

double RunConfig::positive(const std::string& key, double fallback) const {
    const double v = num(key, fallback);
    if (!(v > 0.0)) throw ConfigError("key '" + key + "' must be positive");
    return v;
}

long RunConfig::integer(const std::string& key, long fallback) const {
    const double v = num(key, static_cast<double>(fallback));
    const long i = static_cast<long>(v);
    if (static_cast<double>(i) != v) throw ConfigError("key '" + key + "' must be an integer");
    return i;
}

std::uint64_t RunConfig::seed(const std::string& key, std::uint64_t fallback) const {
    const auto it = values.find(key);
    if (it == values.end()) return fallback;
    try {
        std::size_t pos = 0;
        const auto v = std::stoull(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument(it->second);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': not an unsigned integer");
    }
}

bool RunConfig::flag(const std::string& key) const {
    const std::string v = str(key, "0");
    if (v == "1" || v == "true") return true;
    if (v == "0" || v == "false") return false;
    throw ConfigError("key '" + key + "' must be 0/1");
}

std::vector<double> RunConfig::grid(const std::string& key, const std::string& fallback) const {
    const std::string raw = str(key, fallback);
    std::vector<double> out;
    std::stringstream ss(raw);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_double(key, item));
    if (out.empty()) throw ConfigError("key '" + key + "': empty list");
    return out;
}

std::vector<int> RunConfig::int_list(const std::string& key, const std::string& fallback) const {
    std::vector<int> out;
    for (double v : grid(key, fallback)) {
        if (v != static_cast<double>(static_cast<int>(v)) || v < 1)
            throw ConfigError("key '" + key + "': expected positive integers");
        out.push_back(static_cast<int>(v));
    }
    return out;
}

std::pair<double, double> RunConfig::betas() const {
    const auto b = grid("betas", "0.9,0.95");
    if (b.size() != 2) throw ConfigError("key 'betas': expected two values");
    return {b[0], b[1]};
}

prior::CorrelationSchedule RunConfig::schedule() const {
    const std::string raw = str("schedule", "constant");
    const auto colon = raw.find(':');
    const std::string kind = raw.substr(0, colon);
    std::vector<double> args;
    if (colon != std::string::npos) {
        std::stringstream ss(raw.substr(colon + 1));
        std::string item;
        while (std::getline(ss, item, ',')) args.push_back(parse_double("schedule", item));
    }
    if (kind == "constant" && args.empty()) return prior::CorrelationSchedule::constant();
    if (kind == "linear" && args.size() == 2)
        return prior::CorrelationSchedule::linear(args[0], args[1]);
    if (kind == "quadratic" && args.empty()) return prior::CorrelationSchedule::quadratic();
    if (kind == "exponential" && args.size() == 1)
        return prior::CorrelationSchedule::exponential(args[0]);
    throw ConfigError(
        "key 'schedule': expected constant | linear:a,c | quadratic | exponential:r, got '" +
        raw + "'");
}

namespace {

pipeline::TaskConfig task_from(const RunConfig& cfg, int n_frames, int feature_dim) {
    auto task = pipeline::TaskConfig::make(pipeline::parse_task(cfg.str("task", "interpolation")),
                                           n_frames, feature_dim);
    if (cfg.has("coupling")) task.coupling = pipeline::parse_coupling(cfg.require("coupling"));
    task.sr_factor = static_cast<int>(cfg.integer("sr_factor", 4));
    if (task.sr_factor < 2) throw ConfigError("key 'sr_factor' must be >= 2");
    if (pipeline::free_count(task) < 1)
        throw ConfigError("task leaves no free frames at this n_frames");
    return task;
}

pipeline::PriorParams prior_from(const RunConfig& cfg) {
    pipeline::PriorParams p;
    p.eps = cfg.positive("eps", 0.1);
    p.alpha = cfg.num("alpha", 1.0);
    if (p.alpha < 0.0) throw ConfigError("key 'alpha' must be >= 0");
    p.horizon = cfg.positive("horizon", 1.0);
    p.schedule = cfg.schedule();
    return p;
}

pipeline::TrainConfig train_from(const RunConfig& cfg) {
    pipeline::TrainConfig t;
    t.steps = cfg.integer("steps", 20000);
    t.batch = static_cast<int>(cfg.integer("batch", 128));
    if (t.steps < 1 || t.batch < 1) throw ConfigError("steps and batch must be >= 1");
    t.lr = static_cast<float>(cfg.positive("lr", 3e-5));
    const auto [b1, b2] = cfg.betas();
    t.beta1 = static_cast<float>(b1);
    t.beta2 = static_cast<float>(b2);
    t.weight_decay = static_cast<float>(cfg.num("weight_decay", 1e-4));
    t.ema_rate = static_cast<float>(cfg.num("ema", 0.999));
    t.hidden = cfg.int_list("hidden", "256,256");
    t.temb_width = static_cast<int>(cfg.integer("temb_width", 16));
    t.val_count = static_cast<int>(cfg.integer("val_count", 64));
    t.seed = cfg.seed("seed", 1);
    return t;
}

std::map<std::string, std::string> resolved_for_sidecar(const RunConfig& cfg) {
    auto out = cfg.values;
    out.erase("config");
    if (!out.count("seed")) out["seed"] = "1";
    return out;
}

int cmd_gen_data(const RunConfig& cfg) {
    const long count = cfg.integer("count", 0);
    if (count < 1) throw ConfigError("gen-data: key 'count' must be >= 1");
    const int n_frames = static_cast<int>(cfg.integer("n_frames", 8));
    const int feature_dim = static_cast<int>(cfg.integer("feature_dim", 16));
    pipeline::DotParams dot;
    dot.speed_min = cfg.positive("speed_min", 0.5);
    dot.speed_max = cfg.positive("speed_max", 2.0);
    dot.width_min = cfg.positive("width_min", 1.0);
    dot.width_max = cfg.positive("width_max", 2.0);
    const auto data = pipeline::generate_bouncing_dot(static_cast<int>(count), n_frames,
                                                      feature_dim, cfg.seed("seed", 1), dot);
    io::save_dataset(cfg.require("out"), data);
    std::printf("wrote %ld sequences (%d x %d) to %s\n", count, n_frames, feature_dim,
                cfg.require("out").c_str());
    return 0;
}

int cmd_train(const RunConfig& cfg) {
    const std::string out = cfg.require("out");
    const auto data = io::load_dataset(cfg.require("data"));
    const auto task = task_from(cfg, data.n_frames, data.feature_dim);
    const auto params = prior_from(cfg);
    const auto tcfg = train_from(cfg);

    const auto result = pipeline::train(params, task, data, tcfg);

    io::save_checkpoint(out, {result.model, result.opt, result.ema});
    io::write_sidecar(out, resolved_for_sidecar(cfg));
    if (cfg.has("loss_out")) {
        std::ofstream trace(cfg.require("loss_out"));
        trace << "step,loss\n";
        for (std::size_t i = 0; i < result.loss_trace.size(); ++i) {
            char line[64];
            std::snprintf(line, sizeof line, "%zu,%.8g\n", i,
                          static_cast<double>(result.loss_trace[i]));
            trace << line;
        }
    }
    std::printf("trained %ld steps, final loss %.6g, checkpoint %s\n", tcfg.steps,
                static_cast<double>(result.loss_trace.back()), out.c_str());
    return 0;
}

int cmd_sample(const RunConfig& cfg) {
    const std::string out = cfg.require("out");
    const auto data = io::load_dataset(cfg.require("data"));
    const auto ckpt = io::load_checkpoint(cfg.require("model"));
    const auto task = task_from(cfg, data.n_frames, data.feature_dim);
    const auto params = prior_from(cfg);
    const int n_steps = static_cast<int>(cfg.integer("n_sample_steps", 1000));
    if (n_steps < 1) throw ConfigError("key 'n_sample_steps' must be >= 1");
    const int val_count = static_cast<int>(cfg.integer("val_count", 64));

    const auto split = pipeline::split_dataset(data.count(), val_count, cfg.seed("seed", 1));
    const long count = cfg.integer("count", static_cast<long>(split.val.size()));
    if (count < 1 || count > static_cast<long>(split.val.size()))
        throw ConfigError("key 'count' must be in [1, val split size]");

    Rng rng(cfg.seed("seed", 1) ^ 0x73616d70ULL);
    std::vector<MatrixF> clean, corrupted;
    for (long i = 0; i < count; ++i) {
        clean.push_back(data.sequences[split.val[static_cast<std::size_t>(i)]]);
        corrupted.push_back(pipeline::corrupt(task, clean.back(), rng));
    }

    const auto eval_model = ckpt.ema.snapshot(ckpt.model);
    const auto generated = pipeline::sample_batch(params, task, pipeline::mlp_predictor(eval_model),
                                                  corrupted, n_steps, rng);

    pipeline::Dataset out_data;
    out_data.n_frames = data.n_frames;
    out_data.feature_dim = data.feature_dim;
    out_data.sequences = generated;
    io::save_dataset(out, out_data);
    io::write_sidecar(out, resolved_for_sidecar(cfg));

    if (cfg.has("ref_out")) {
        pipeline::Dataset ref_data;
        ref_data.n_frames = data.n_frames;
        ref_data.feature_dim = data.feature_dim;
        ref_data.sequences = clean;
        io::save_dataset(cfg.require("ref_out"), ref_data);
        io::write_sidecar(cfg.require("ref_out"), resolved_for_sidecar(cfg));
    }
    if (cfg.has("strips")) {
        const std::string prefix = cfg.require("strips");
        for (std::size_t i = 0; i < generated.size(); ++i) {
            char path[512];
            std::snprintf(path, sizeof path, "%s_%04zu.pgm", prefix.c_str(), i);
            io::write_pgm_strip(path, generated[i]);
        }
    }
    std::printf("sampled %ld sequences with %d steps to %s\n", count, n_steps, out.c_str());
    return 0;
}

int cmd_metrics(const RunConfig& cfg) {
    const std::string out = cfg.require("out");
    const auto ref = io::load_dataset(cfg.require("ref"));
    const auto gen = io::load_dataset(cfg.require("gen"));
    if (ref.count() != gen.count() || ref.n_frames != gen.n_frames ||
        ref.feature_dim != gen.feature_dim)
        throw ConfigError("metrics: ref and gen datasets have different shapes");
    const auto task = task_from(cfg, ref.n_frames, ref.feature_dim);

    const auto result = pipeline::evaluate_pairs(task, gen.sequences, ref.sequences);
    double mse = 0.0;
    const int fb = pipeline::free_begin(task);
    const int nf = pipeline::free_count(task);
    for (int i = 0; i < ref.count(); ++i) {
        const MatrixF d =
            gen.sequences[i].middleRows(fb, nf) - ref.sequences[i].middleRows(fb, nf);
        mse += static_cast<double>(d.squaredNorm()) / d.size();
    }
    mse /= ref.count();

    std::ofstream csv(out);
    if (!csv) throw std::runtime_error("cannot open for writing: " + out);
    char row[256];
    std::snprintf(row, sizeof row, "%llu,%s,%.6g,%.6g,%.6f,%.6f,%.8g\n",
                  static_cast<unsigned long long>(cfg.seed("seed", 1)),
                  pipeline::task_name(task.kind), cfg.positive("eps", 0.1), cfg.num("alpha", 1.0),
                  result.mean_psnr, result.mean_ssim, mse);
    csv << "seed,task,eps,alpha,psnr,ssim,loss\n" << row;
    csv.close();
    io::write_sidecar(out, resolved_for_sidecar(cfg));
    std::printf("psnr %.6f  ssim %.6f  over %d pairs -> %s\n", result.mean_psnr, result.mean_ssim,
                result.count, out.c_str());
    return 0;
}

int cmd_sweep(const RunConfig& cfg) {
    const std::string out = cfg.require("out");
    const auto data = io::load_dataset(cfg.require("data"));
    const auto task = task_from(cfg, data.n_frames, data.feature_dim);
    const auto params = prior_from(cfg);
    const auto tcfg = train_from(cfg);
    const auto eps_grid = cfg.grid("eps_grid", "0.1,1");
    const auto alpha_grid = cfg.grid("alpha_grid", "0.1,1");
    const int n_steps = static_cast<int>(cfg.integer("n_sample_steps", 1000));

    const auto cells = pipeline::sweep(eps_grid, alpha_grid, params, task, data, tcfg, n_steps);

    std::ofstream csv(out);
    if (!csv) throw std::runtime_error("cannot open for writing: " + out);
    csv << "seed,task,eps,alpha,psnr,ssim,loss,status\n";
    for (const auto& cell : cells) {
        char row[320];
        if (cell.ok)
            std::snprintf(row, sizeof row, "%llu,%s,%.6g,%.6g,%.6f,%.6f,%.8g,ok\n",
                          static_cast<unsigned long long>(tcfg.seed),
                          pipeline::task_name(task.kind), cell.eps, cell.alpha, cell.psnr,
                          cell.ssim, cell.final_loss);
        else
            std::snprintf(row, sizeof row, "%llu,%s,%.6g,%.6g,nan,nan,nan,failed\n",
                          static_cast<unsigned long long>(tcfg.seed),
                          pipeline::task_name(task.kind), cell.eps, cell.alpha);
        csv << row;
        std::printf("%s", row);
    }
    csv.close();
    io::write_sidecar(out, resolved_for_sidecar(cfg));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fputs(kUsage, stderr);
        return 2;
    }
    const std::string command = argv[1];

    try {
        RunConfig cfg;
        // config file first, then command-line overrides
        for (int i = 2; i + 1 < argc; i += 2) {
            if (std::strcmp(argv[i], "--config") == 0) cfg.load_file(argv[i + 1]);
        }
        for (int i = 2; i < argc; i += 2) {
            const std::string arg = argv[i];
            if (arg.rfind("--", 0) != 0)
                throw ConfigError("expected --key value pairs, got '" + arg + "'");
            if (i + 1 >= argc) throw ConfigError("missing value for " + arg);
            const std::string key = arg.substr(2);
            if (key == "config") continue;
            cfg.set(key, argv[i + 1]);
        }

        if (command == "gen-data") return cmd_gen_data(cfg);
        if (command == "verify") return run_verify(cfg);
        if (command == "train") return cmd_train(cfg);
        if (command == "sample") return cmd_sample(cfg);
        if (command == "metrics") return cmd_metrics(cfg);
        if (command == "sweep") return cmd_sweep(cfg);
        std::fputs(kUsage, stderr);
        return 2;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const FormatError& e) {
        std::fprintf(stderr, "format error: %s\n", e.what());
        return 3;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const DivergedError& e) {
        std::fprintf(stderr, "run failed: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
}
