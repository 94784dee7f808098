// SPDX-License-Identifier: Apache-2.0
//
// collagan: dataset generation, training, imputation, essentiality study and
// gradient self-check. Every subcommand that takes --out writes
// run_manifest.txt there and nothing outside it.
//
// Exit codes: 0 ok, 1 unexpected failure, 2 configuration, 3 data, 4 numeric.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "collagan/gradcheck.hpp"
#include "collagan/metrics.hpp"
#include "collagan/parallel.hpp"
#include "collagan/trainer.hpp"

namespace fs = std::filesystem;
using namespace collagan;

namespace {

enum ExitCode { kOk = 0, kUnexpected = 1, kConfig = 2, kData = 3, kNumeric = 4 };

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

struct RunManifest {
    std::string subcommand;
    KeyValueConfig config;
    std::uint64_t seed = 0;
    std::string started = utc_now();
    std::vector<std::string> outputs;

    void write(const fs::path& out) const {
        std::ofstream os(out / "run_manifest.txt");
        os << "subcommand=" << subcommand << "\n";
        os << "version=" << COLLAGAN_VERSION << "\n";
        os << "seed=" << seed << "\n";
        os << "threads=" << intra_op_threads() << "\n";
        os << "started=" << started << "\n";
        os << "finished=" << utc_now() << "\n";
        for (const auto& [k, v] : config.values()) os << "config." << k << "=" << v << "\n";
        for (const auto& o : outputs) os << "output=" << o << "\n";
        if (!os) throw DataError("cannot write manifest in " + out.string());
    }
};

void require_dir(const fs::path& p, const char* what) {
    if (!fs::is_directory(p)) throw DataError(std::string(what) + " not found: " + p.string());
}

Split parse_split_flag(const std::string& name) {
    try {
        return parse_split(name);
    } catch (const FormatError&) {
        throw ConfigError("--split must be train, val or test");
    }
}

std::vector<DomainSet> preprocessed(const Dataset& ds, Split split) {
    std::vector<DomainSet> out;
    for (const auto* s : ds.select(split)) out.push_back(preprocess(*s));
    if (out.empty()) throw DataError("split '" + split_name(split) + "' is empty");
    return out;
}

std::vector<const DomainSet*> pointers(const std::vector<DomainSet>& sets) {
    std::vector<const DomainSet*> p;
    for (const auto& s : sets) p.push_back(&s);
    return p;
}

void log(const std::string& msg) { std::cerr << msg << std::endl; }

// ---- subcommands -----------------------------------------------------------

struct GenDataArgs {
    int subjects = 10, slices = 28, size = 64;
    std::uint64_t seed = 0;
    std::string out;
};

int cmd_gen_data(const GenDataArgs& a) {
    RunManifest m;
    m.subcommand = "gen-data";
    m.seed = a.seed;
    m.config.set("subjects", std::to_string(a.subjects));
    m.config.set("slices", std::to_string(a.slices));
    m.config.set("size", std::to_string(a.size));
    Dataset ds;
    try {
        ds = generate_dataset(a.subjects, a.slices, a.size, a.size, a.seed);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    save_dataset(ds, a.out);
    m.outputs = {"manifest.txt", "subject_*.snap"};
    m.write(a.out);
    log("wrote " + std::to_string(ds.sets.size()) + " slices from " + std::to_string(a.subjects) + " subjects to " + a.out);
    return kOk;
}

struct TrainArgs {
    std::string data, config, out;
    std::optional<std::uint64_t> seed;
    std::optional<std::int64_t> steps;
    bool resume = false;
};

int cmd_train(const TrainArgs& a) {
    require_dir(a.data, "dataset");
    KeyValueConfig kv = a.config.empty() ? KeyValueConfig{} : KeyValueConfig::load(a.config);
    if (a.seed) kv.set("seed", std::to_string(*a.seed));
    if (a.steps) kv.set("steps", std::to_string(*a.steps));
    const TrainConfig cfg = TrainConfig::from_kv(kv);
    const Dataset ds = load_dataset(a.data);
    RunManifest m;
    m.subcommand = "train";
    m.seed = cfg.seed;
    m.config = cfg.to_kv();
    m.config.set("data", fs::absolute(a.data).string());
    FitOptions opts;
    opts.resume = a.resume;
    opts.progress = log;
    const auto result = fit(cfg, ds, a.out, opts);
    m.outputs = {"train_log.csv", "checkpoints/best", "checkpoints/last"};
    m.config.set("best_step", std::to_string(result.best_step));
    m.write(a.out);
    return kOk;
}

struct ImputeArgs {
    std::string checkpoint, data, target, out, split = "test";
    bool dump_pgm = false;
};

int cmd_impute(const ImputeArgs& a) {
    const int target = domain_index(a.target);
    if (target < 0) throw ConfigError("--target-domain '" + a.target + "' is not a dataset domain (T1, T2, T2F, T1Gd)");
    const Split split = parse_split_flag(a.split);
    require_dir(a.checkpoint, "checkpoint");
    require_dir(a.data, "dataset");
    const GeneratorNet net = load_generator(a.checkpoint);
    const Dataset ds = load_dataset(a.data);
    const auto sets = preprocessed(ds, split);
    fs::create_directories(a.out);
    if (a.dump_pgm) fs::create_directories(fs::path(a.out) / "images");

    MetricsReport report;
    report.tag = a.target + "_Colla";
    std::vector<NamedTensor> imputed;
    for (const auto& set : sets) {
        const Tensor fake = impute_domain(net, set, target);
        check_finite(fake, "imputed image");
        const Tensor& truth = set.images[static_cast<std::size_t>(target)];
        report.records.push_back({set.subject, set.slice, target, nmse(truth, fake), ssim_scalar(truth, fake)});
        const std::string stem = "s" + std::to_string(set.subject) + "_z" + std::to_string(set.slice);
        imputed.push_back({stem + "." + a.target, fake});
        if (a.dump_pgm) {
            write_pgm(fs::path(a.out) / "images" / (stem + "_" + a.target + "_imputed.pgm"), fake);
            write_pgm(fs::path(a.out) / "images" / (stem + "_" + a.target + "_real.pgm"), truth);
        }
    }
    save_snapshot(fs::path(a.out) / "imputed.snap", imputed);
    {
        std::ofstream csv(fs::path(a.out) / "metrics.csv");
        report.write_csv(csv);
        std::ofstream txt(fs::path(a.out) / "metrics.txt");
        report.write_table(txt);
    }
    report.write_table(std::cout);

    RunManifest m;
    m.subcommand = "impute";
    m.config.set("checkpoint", fs::absolute(a.checkpoint).string());
    m.config.set("data", fs::absolute(a.data).string());
    m.config.set("target_domain", a.target);
    m.config.set("split", a.split);
    m.outputs = {"imputed.snap", "metrics.csv", "metrics.txt"};
    if (a.dump_pgm) m.outputs.push_back("images/");
    m.write(a.out);
    return kOk;
}

struct EssentialityArgs {
    std::string checkpoint, data, out, split = "test";
};

int cmd_eval_essentiality(const EssentialityArgs& a) {
    const Split split = parse_split_flag(a.split);
    require_dir(a.checkpoint, "checkpoint");
    require_dir(a.data, "dataset");
    const GeneratorNet net = load_generator(a.checkpoint);
    const Dataset ds = load_dataset(a.data);
    const auto sets = preprocessed(ds, split);
    const auto rows = essentiality_study(net, pointers(sets));
    fs::create_directories(a.out);
    {
        std::ofstream csv(fs::path(a.out) / "essentiality.csv");
        write_essentiality_csv(csv, rows);
        std::ofstream txt(fs::path(a.out) / "essentiality.txt");
        write_essentiality_table(txt, rows);
    }
    write_essentiality_table(std::cout, rows);
    RunManifest m;
    m.subcommand = "eval-essentiality";
    m.config.set("checkpoint", fs::absolute(a.checkpoint).string());
    m.config.set("data", fs::absolute(a.data).string());
    m.config.set("split", a.split);
    m.outputs = {"essentiality.csv", "essentiality.txt"};
    m.write(a.out);
    return kOk;
}

struct GradcheckArgs {
    std::uint64_t seed = 0;
    double tolerance = 1e-5;
    double composite_tolerance = 1e-4;
    int trials = 100;
    std::string out;
};

int cmd_gradcheck(const GradcheckArgs& a) {
    if (!(a.tolerance > 0) || !(a.composite_tolerance > 0)) throw ConfigError("tolerances must be > 0");
    const auto results =
        run_gradient_suite(standard_gradient_cases(), a.seed, a.trials, a.tolerance, a.composite_tolerance);
    bool ok = true;
    std::ostringstream report;
    for (const auto& r : results) {
        char line[160];
        std::snprintf(line, sizeof line, "%-4s %-24s %-9s max_rel_err %.3e  tol %.0e  trials %d\n",
                      r.passed() ? "PASS" : "FAIL", r.name.c_str(), r.composite ? "composite" : "primitive",
                      r.max_error, r.tolerance, r.trials);
        report << line;
        ok = ok && r.passed();
    }
    std::cout << report.str();
    if (!a.out.empty()) {
        fs::create_directories(a.out);
        std::ofstream(fs::path(a.out) / "gradcheck.txt") << report.str();
        RunManifest m;
        m.subcommand = "gradcheck";
        m.seed = a.seed;
        m.config.set("tolerance", format_double(a.tolerance));
        m.config.set("composite_tolerance", format_double(a.composite_tolerance));
        m.config.set("trials", std::to_string(a.trials));
        m.outputs = {"gradcheck.txt"};
        m.write(a.out);
    }
    if (!ok) throw NumericError("gradient check failed");
    return kOk;
}

template <typename Fn>
int guarded(Fn&& fn) {
    try {
        return fn();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kNumeric;
    } catch (const FormatError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kData;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kData;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUnexpected;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CollaGAN-style multi-domain image imputation on procedural phantoms"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(COLLAGAN_VERSION));

    GenDataArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "Generate a phantom dataset");
    gen_cmd->add_option("--subjects", gen.subjects, "Number of subjects (>= 3)")->capture_default_str();
    gen_cmd->add_option("--slices", gen.slices, "Slices per subject")->capture_default_str();
    gen_cmd->add_option("--size", gen.size, "Image height and width (multiple of 32)")->capture_default_str();
    gen_cmd->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
    gen_cmd->add_option("--out", gen.out, "Output dataset directory")->required();

    TrainArgs train;
    auto* train_cmd = app.add_subcommand("train", "Train generator and discriminator");
    train_cmd->add_option("--data", train.data, "Dataset directory")->required();
    train_cmd->add_option("--config", train.config, "key=value config file");
    train_cmd->add_option("--seed", train.seed, "Override the config seed");
    train_cmd->add_option("--steps", train.steps, "Override the config step count");
    train_cmd->add_option("--out", train.out, "Run directory")->required();
    train_cmd->add_flag("--resume", train.resume, "Continue from <out>/checkpoints/last");

    ImputeArgs imp;
    auto* imp_cmd = app.add_subcommand("impute", "Impute one domain for a dataset split");
    imp_cmd->add_option("--checkpoint", imp.checkpoint, "Checkpoint directory")->required();
    imp_cmd->add_option("--data", imp.data, "Dataset directory")->required();
    imp_cmd->add_option("--target-domain", imp.target, "Domain to impute (T1, T2, T2F, T1Gd)")->required();
    imp_cmd->add_option("--split", imp.split, "train, val or test")->capture_default_str();
    imp_cmd->add_flag("--dump-pgm", imp.dump_pgm, "Also write 8-bit PGM images");
    imp_cmd->add_option("--out", imp.out, "Output directory")->required();

    EssentialityArgs ess;
    auto* ess_cmd = app.add_subcommand("eval-essentiality", "Leave-one-domain-out segmentation study");
    ess_cmd->add_option("--checkpoint", ess.checkpoint, "Checkpoint directory")->required();
    ess_cmd->add_option("--data", ess.data, "Dataset directory")->required();
    ess_cmd->add_option("--split", ess.split, "train, val or test")->capture_default_str();
    ess_cmd->add_option("--out", ess.out, "Output directory")->required();

    GradcheckArgs gc;
    auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every primitive and loss");
    gc_cmd->add_option("--seed", gc.seed, "Base seed")->capture_default_str();
    gc_cmd->add_option("--tolerance", gc.tolerance, "Max relative error for primitives")->capture_default_str();
    gc_cmd->add_option("--composite-tolerance", gc.composite_tolerance, "Max relative error for losses and blocks")
        ->capture_default_str();
    gc_cmd->add_option("--trials", gc.trials, "Random trials per case")->capture_default_str();
    gc_cmd->add_option("--out", gc.out, "Optional report directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }

    if (*gen_cmd) return guarded([&] { return cmd_gen_data(gen); });
    if (*train_cmd) return guarded([&] { return cmd_train(train); });
    if (*imp_cmd) return guarded([&] { return cmd_impute(imp); });
    if (*ess_cmd) return guarded([&] { return cmd_eval_essentiality(ess); });
    if (*gc_cmd) return guarded([&] { return cmd_gradcheck(gc); });
    return kConfig;
}
