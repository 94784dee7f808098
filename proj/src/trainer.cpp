// SPDX-License-Identifier: Apache-2.0

#include "collagan/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "collagan/metrics.hpp"

namespace collagan {

namespace {

const std::set<std::string> kTrainKeys = {
    "steps",         "batch_size",      "seed",           "lr_gen",          "lr_disc",
    "adam_beta1",    "adam_beta2",      "adam_eps",       "lambda_mcc",      "lambda_mcc_ssim",
    "lambda_gan",    "lambda_clsf",     "domains",        "gen_base_channels", "gen_levels",
    "disc_base_channels", "leaky_slope", "dropout_rate",  "augment",         "validate_every",
    "checkpoint_every", "val_max_images"};

std::string g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Restores discriminator trainability when the generator phase exits.
class FreezeGuard {
public:
    explicit FreezeGuard(std::vector<NamedTensor> params) : params_(std::move(params)) {
        set_trainable(params_, false);
    }
    ~FreezeGuard() { set_trainable(params_, true); }
    FreezeGuard(const FreezeGuard&) = delete;
    FreezeGuard& operator=(const FreezeGuard&) = delete;

private:
    std::vector<NamedTensor> params_;
};

std::string describe_terms(std::int64_t step, int target, const std::vector<std::pair<std::string, Tensor>>& terms) {
    std::ostringstream os;
    os << "non-finite loss at step " << step << " (target " << kDomainNames.at(static_cast<std::size_t>(target)) << "):";
    for (const auto& [name, t] : terms) {
        os << ' ' << name << '=';
        if (t.defined()) {
            os << g17(t.item());
        } else {
            os << "n/a";
        }
    }
    return os.str();
}

void require_finite(std::int64_t step, int target, const std::vector<std::pair<std::string, Tensor>>& terms) {
    for (const auto& [name, t] : terms) {
        if (!t.defined() || !std::isfinite(t.item())) throw NumericError(describe_terms(step, target, terms));
    }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream os(path);
    os << text;
    if (!os) throw std::runtime_error("cannot write " + path.string());
}

std::string log_row(const StepReport* r, std::int64_t step, const std::vector<double>* val, int domains) {
    std::string row = std::to_string(step);
    if (r) {
        row += "," + kDomainNames.at(static_cast<std::size_t>(r->target));
        for (double v : {r->l_mcc, r->l_mcc_ssim, r->l_gan_gen, r->l_gan_dsc, r->l_clsf_real, r->l_clsf_fake,
                         r->g_total, r->d_total}) {
            row += "," + g17(v);
        }
    } else {
        row += std::string(9, ',');
    }
    for (int k = 0; k < domains; ++k) {
        row += ",";
        if (val) row += g17((*val)[static_cast<std::size_t>(k)]);
    }
    return row + "\n";
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

std::vector<double> parse_val_columns(const std::string& row, int domains) {
    std::vector<std::string> cells;
    std::stringstream ss(row);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    while (static_cast<int>(cells.size()) < 10 + domains) cells.emplace_back();
    std::vector<double> out;
    for (int k = 0; k < domains; ++k) {
        const std::string& c = cells[static_cast<std::size_t>(10 + k)];
        if (c.empty()) return {};
        out.push_back(std::stod(c));
    }
    return out;
}

}  // namespace

void TrainConfig::validate() const {
    if (steps <= 0) throw ConfigError("train: steps must be > 0");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (validate_every < 1) throw ConfigError("train: validate_every must be >= 1");
    if (checkpoint_every < 1) throw ConfigError("train: checkpoint_every must be >= 1");
    if (val_max_images < 0) throw ConfigError("train: val_max_images must be >= 0");
    if (generator.domains != discriminator.domains) throw ConfigError("train: generator and discriminator domain counts differ");
    try {
        adam_gen.validate();
        adam_disc.validate();
        weights.validate();
        generator.validate();
        discriminator.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

KeyValueConfig TrainConfig::to_kv() const {
    KeyValueConfig kv;
    kv.set("steps", std::to_string(steps));
    kv.set("batch_size", std::to_string(batch_size));
    kv.set("seed", std::to_string(seed));
    kv.set("lr_gen", format_double(adam_gen.lr));
    kv.set("lr_disc", format_double(adam_disc.lr));
    kv.set("adam_beta1", format_double(adam_gen.beta1));
    kv.set("adam_beta2", format_double(adam_gen.beta2));
    kv.set("adam_eps", format_double(adam_gen.eps));
    kv.set("lambda_mcc", format_double(weights.mcc));
    kv.set("lambda_mcc_ssim", format_double(weights.mcc_ssim));
    kv.set("lambda_gan", format_double(weights.gan));
    kv.set("lambda_clsf", format_double(weights.clsf));
    kv.set("domains", std::to_string(generator.domains));
    kv.set("gen_base_channels", std::to_string(generator.base_channels));
    kv.set("gen_levels", std::to_string(generator.levels));
    kv.set("disc_base_channels", std::to_string(discriminator.base_channels));
    kv.set("leaky_slope", format_double(generator.leaky_slope));
    kv.set("dropout_rate", format_double(discriminator.dropout_rate));
    kv.set("augment", augment ? "true" : "false");
    kv.set("validate_every", std::to_string(validate_every));
    kv.set("checkpoint_every", std::to_string(checkpoint_every));
    kv.set("val_max_images", std::to_string(val_max_images));
    return kv;
}

TrainConfig TrainConfig::from_kv(const KeyValueConfig& kv) {
    kv.reject_unknown(kTrainKeys);
    TrainConfig c;
    c.steps = kv.get_int("steps", c.steps);
    c.batch_size = static_cast<int>(kv.get_int("batch_size", c.batch_size));
    c.seed = kv.get_uint("seed", c.seed);
    c.adam_gen.lr = kv.get_double("lr_gen", c.adam_gen.lr);
    c.adam_disc.lr = kv.get_double("lr_disc", c.adam_disc.lr);
    for (AdamConfig* a : {&c.adam_gen, &c.adam_disc}) {
        a->beta1 = kv.get_double("adam_beta1", a->beta1);
        a->beta2 = kv.get_double("adam_beta2", a->beta2);
        a->eps = kv.get_double("adam_eps", a->eps);
    }
    c.weights.mcc = kv.get_double("lambda_mcc", c.weights.mcc);
    c.weights.mcc_ssim = kv.get_double("lambda_mcc_ssim", c.weights.mcc_ssim);
    c.weights.gan = kv.get_double("lambda_gan", c.weights.gan);
    c.weights.clsf = kv.get_double("lambda_clsf", c.weights.clsf);
    const int domains = static_cast<int>(kv.get_int("domains", c.generator.domains));
    c.generator.domains = domains;
    c.discriminator.domains = domains;
    c.generator.base_channels = static_cast<int>(kv.get_int("gen_base_channels", c.generator.base_channels));
    c.generator.levels = static_cast<int>(kv.get_int("gen_levels", c.generator.levels));
    c.discriminator.base_channels = static_cast<int>(kv.get_int("disc_base_channels", c.discriminator.base_channels));
    c.generator.leaky_slope = kv.get_double("leaky_slope", c.generator.leaky_slope);
    c.discriminator.leaky_slope = c.generator.leaky_slope;
    c.discriminator.dropout_rate = kv.get_double("dropout_rate", c.discriminator.dropout_rate);
    c.augment = kv.get_bool("augment", c.augment);
    c.validate_every = kv.get_int("validate_every", c.validate_every);
    c.checkpoint_every = kv.get_int("checkpoint_every", c.checkpoint_every);
    c.val_max_images = static_cast<int>(kv.get_int("val_max_images", c.val_max_images));
    c.validate();
    return c;
}

TrainingState::TrainingState(const TrainConfig& cfg)
    : config(cfg),
      rng(cfg.seed),
      generator(cfg.generator, rng),
      discriminator(cfg.discriminator, rng),
      opt_gen(generator.parameters(), cfg.adam_gen),
      opt_disc(discriminator.parameters(), cfg.adam_disc) {
    config.validate();
}

StepBatch prepare_step(TrainingState& state, const std::vector<const DomainSet*>& batch, int target) {
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
    const int n = state.config.generator.domains;
    if (target < 0 || target >= n) throw std::out_of_range("train_step: target domain out of range");

    std::vector<DomainSet> augmented;
    std::vector<const DomainSet*> sets = batch;
    if (state.config.augment) {
        augmented.reserve(batch.size());
        for (const auto* s : batch) augmented.push_back(augment(*s, state.rng));
        for (std::size_t i = 0; i < sets.size(); ++i) sets[i] = &augmented[i];
    }

    StepBatch sb;
    sb.target = target;
    for (int k = 0; k < n; ++k) sb.images.push_back(stack_domain(sets, k));
    const Shape& shape = sb.images.front().shape();
    TargetMask mask(target, n, shape[0], shape[2], shape[3]);

    std::vector<DomainImage> inputs;
    for (int k = 0; k < n; ++k) {
        if (k != target) inputs.push_back({k, sb.images[static_cast<std::size_t>(k)]});
    }
    sb.bundle.target = target;
    sb.bundle.num_domains = n;
    sb.bundle.forward_fake = impute(state.generator, inputs, mask);
    for (int k = 0; k < n; ++k) {
        if (k == target) continue;
        std::vector<DomainImage> reals;
        for (const auto& in : inputs) {
            if (in.domain != k) reals.push_back(in);
        }
        sb.bundle.originals[k] = sb.images[static_cast<std::size_t>(k)];
        sb.bundle.reconstructions[k] = backward_cycle(state.generator, sb.bundle.forward_fake, reals, target, k);
    }
    return sb;
}

DiscriminatorLossTerms update_discriminator(TrainingState& state, const StepBatch& sb) {
    const Tensor& real = sb.images.at(static_cast<std::size_t>(sb.target));
    auto real_out = state.discriminator.forward(real, true, state.rng);
    auto fake_out = state.discriminator.forward(sb.bundle.forward_fake.detach(), true, state.rng);
    auto terms = total_discriminator_loss(real_out.patch_map, fake_out.patch_map, real_out.class_logits, sb.target);
    require_finite(state.step + 1, sb.target,
                   {{"l_gan_dsc", terms.gan_dsc}, {"l_clsf_real", terms.clsf_real}, {"d_total", terms.total}});
    state.opt_disc.zero_grad();
    terms.total.backward();
    state.opt_disc.step();
    return terms;
}

GeneratorLossTerms update_generator(TrainingState& state, const StepBatch& sb) {
    FreezeGuard frozen(state.discriminator.parameters());
    auto out = state.discriminator.forward(sb.bundle.forward_fake, true, state.rng);
    auto terms = total_generator_loss(sb.bundle, out.patch_map, out.class_logits, state.config.weights);
    require_finite(state.step + 1, sb.target,
                   {{"l_mcc", terms.mcc},
                    {"l_mcc_ssim", terms.mcc_ssim},
                    {"l_gan_gen", terms.gan_gen},
                    {"l_clsf_fake", terms.clsf_fake},
                    {"g_total", terms.total}});
    state.opt_gen.zero_grad();
    terms.total.backward();
    state.opt_gen.step();
    return terms;
}

StepReport train_step(TrainingState& state, const std::vector<const DomainSet*>& batch, int target) {
    StepBatch sb = prepare_step(state, batch, target);
    auto d = update_discriminator(state, sb);
    auto g = update_generator(state, sb);
    ++state.step;
    StepReport r;
    r.step = state.step;
    r.target = target;
    r.l_mcc = g.mcc.item();
    r.l_mcc_ssim = g.mcc_ssim.item();
    r.l_gan_gen = g.gan_gen.item();
    r.l_clsf_fake = g.clsf_fake.item();
    r.g_total = g.total.item();
    r.l_gan_dsc = d.gan_dsc.item();
    r.l_clsf_real = d.clsf_real.item();
    r.d_total = d.total.item();
    return r;
}

int draw_target(Rng& rng, int num_domains) {
    if (num_domains < 1) throw std::invalid_argument("draw_target: no domains");
    return static_cast<int>(rng() % static_cast<std::uint64_t>(num_domains));
}

StepReport train_step(TrainingState& state, const std::vector<const DomainSet*>& batch) {
    return train_step(state, batch, draw_target(state.rng, state.config.generator.domains));
}

std::vector<double> validation_nmse(const GeneratorNet& net, const std::vector<const DomainSet*>& sets) {
    if (sets.empty()) throw std::invalid_argument("validation: no images");
    const int n = net.config().domains;
    NoGradGuard no_grad;
    std::vector<double> totals(static_cast<std::size_t>(n), 0.0);
    constexpr std::size_t kChunk = 8;
    for (std::size_t start = 0; start < sets.size(); start += kChunk) {
        const std::vector<const DomainSet*> chunk(sets.begin() + static_cast<std::ptrdiff_t>(start),
                                                  sets.begin() + static_cast<std::ptrdiff_t>(std::min(sets.size(), start + kChunk)));
        std::vector<Tensor> images;
        for (int k = 0; k < n; ++k) images.push_back(stack_domain(chunk, k));
        const Shape& shape = images.front().shape();
        const std::int64_t plane = shape[2] * shape[3];
        for (int target = 0; target < n; ++target) {
            std::vector<DomainImage> inputs;
            for (int k = 0; k < n; ++k) {
                if (k != target) inputs.push_back({k, images[static_cast<std::size_t>(k)]});
            }
            Tensor fake = impute(net, inputs, TargetMask(target, n, shape[0], shape[2], shape[3]));
            auto truth = images[static_cast<std::size_t>(target)].data();
            auto est = fake.data();
            for (std::int64_t b = 0; b < shape[0]; ++b) {
                totals[static_cast<std::size_t>(target)] +=
                    nmse(truth.subspan(static_cast<std::size_t>(b * plane), static_cast<std::size_t>(plane)),
                         est.subspan(static_cast<std::size_t>(b * plane), static_cast<std::size_t>(plane)));
            }
        }
    }
    for (double& t : totals) t /= static_cast<double>(sets.size());
    return totals;
}

Tensor mean_image(const std::vector<const DomainSet*>& sets, int domain) {
    if (sets.empty()) throw std::invalid_argument("mean_image: no images");
    const Tensor& first = sets.front()->images.at(static_cast<std::size_t>(domain));
    std::vector<double> acc(static_cast<std::size_t>(first.numel()), 0.0);
    for (const auto* s : sets) {
        auto d = s->images.at(static_cast<std::size_t>(domain)).data();
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += d[i];
    }
    for (double& v : acc) v /= static_cast<double>(sets.size());
    return Tensor::from_data(first.shape(), std::move(acc));
}

void save_checkpoint(const TrainingState& state, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_text(dir / "config.txt", state.config.to_kv().to_text());
    std::ostringstream st;
    st << "step " << state.step << "\n";
    st << "best_score " << format_double(state.best_score) << "\n";
    st << "best_step " << state.best_step << "\n";
    st << "rng " << state.rng << "\n";
    write_text(dir / "state.txt", st.str());
    save_snapshot(dir / "gen.snap", state.generator.parameters());
    save_snapshot(dir / "disc.snap", state.discriminator.parameters());
    save_snapshot(dir / "opt_gen.snap", state.opt_gen.state());
    save_snapshot(dir / "opt_disc.snap", state.opt_disc.state());
}

TrainingState load_checkpoint(const std::filesystem::path& dir) {
    const TrainConfig cfg = TrainConfig::from_kv(KeyValueConfig::load(dir / "config.txt"));
    TrainingState state(cfg);
    std::ifstream st(dir / "state.txt");
    if (!st) throw FormatError("checkpoint: missing state.txt in " + dir.string());
    std::string key, best;
    st >> key >> state.step;
    if (key != "step") throw FormatError("checkpoint: malformed state.txt");
    st >> key >> best;
    if (key != "best_score") throw FormatError("checkpoint: malformed state.txt");
    state.best_score = std::stod(best);
    st >> key >> state.best_step;
    if (key != "best_step") throw FormatError("checkpoint: malformed state.txt");
    st >> key >> state.rng;
    if (key != "rng" || !st) throw FormatError("checkpoint: malformed engine state");
    assign_from_snapshot(state.generator.parameters(), load_snapshot(dir / "gen.snap"));
    assign_from_snapshot(state.discriminator.parameters(), load_snapshot(dir / "disc.snap"));
    state.opt_gen.load_state(load_snapshot(dir / "opt_gen.snap"));
    state.opt_disc.load_state(load_snapshot(dir / "opt_disc.snap"));
    return state;
}

GeneratorNet load_generator(const std::filesystem::path& dir) {
    const TrainConfig cfg = TrainConfig::from_kv(KeyValueConfig::load(dir / "config.txt"));
    Rng rng(cfg.seed);
    GeneratorNet net(cfg.generator, rng);
    assign_from_snapshot(net.parameters(), load_snapshot(dir / "gen.snap"));
    return net;
}

std::string train_log_header(int num_domains) {
    std::string h = "step,target,l_mcc,l_mcc_ssim,l_gan_gen,l_gan_dsc,l_clsf_real,l_clsf_fake,g_total,d_total";
    for (int k = 0; k < num_domains; ++k) h += ",val_nmse_" + kDomainNames.at(static_cast<std::size_t>(k));
    return h + "\n";
}

FitResult fit(const TrainConfig& cfg, const Dataset& dataset, const std::filesystem::path& out,
              const FitOptions& options) {
    cfg.validate();
    const int n = cfg.generator.domains;
    if (n != kPhantomDomains) throw ConfigError("train: config has " + std::to_string(n) + " domains, dataset has 4");

    std::vector<DomainSet> train_sets, val_sets;
    for (const auto* s : dataset.select(Split::kTrain)) train_sets.push_back(preprocess(*s));
    for (const auto* s : dataset.select(Split::kVal)) val_sets.push_back(preprocess(*s));
    if (train_sets.empty() || val_sets.empty()) throw std::invalid_argument("train: empty train or validation split");
    if (cfg.val_max_images > 0 && val_sets.size() > static_cast<std::size_t>(cfg.val_max_images)) {
        val_sets.resize(static_cast<std::size_t>(cfg.val_max_images));
    }
    std::vector<const DomainSet*> val;
    for (const auto& s : val_sets) val.push_back(&s);

    std::filesystem::create_directories(out);
    const auto log_path = out / "train_log.csv";
    const auto last_dir = out / "checkpoints" / "last";
    const auto best_dir = out / "checkpoints" / "best";
    auto say = [&](const std::string& msg) {
        if (options.progress) options.progress(msg);
    };

    FitResult result;
    result.log_path = log_path;
    std::optional<TrainingState> state;
    if (options.resume && std::filesystem::exists(last_dir / "state.txt")) {
        state.emplace(load_checkpoint(last_dir));
        TrainConfig saved = state->config;
        saved.steps = cfg.steps;
        if (!(saved == cfg)) throw ConfigError("resume: config differs from the checkpoint (only steps may change)");
        state->config.steps = cfg.steps;
        // Keep the log up to the checkpoint step.
        std::ifstream in(log_path);
        if (!in) throw FormatError("resume: missing " + log_path.string());
        std::string line, kept;
        std::getline(in, line);
        kept = line + "\n";
        while (std::getline(in, line)) {
            const std::int64_t step = std::stoll(line.substr(0, line.find(',')));
            if (step > state->step) break;
            if (step == 0) result.initial_val_nmse = parse_val_columns(line, n);
            kept += line + "\n";
        }
        write_text(log_path, kept);
        say("resumed at step " + std::to_string(state->step));
    } else {
        state.emplace(cfg);
        result.initial_val_nmse = validation_nmse(state->generator, val);
        write_text(log_path, train_log_header(n) + log_row(nullptr, 0, &result.initial_val_nmse, n));
        state->best_score = mean_of(result.initial_val_nmse);
        state->best_step = 0;
        save_checkpoint(*state, best_dir);
    }

    std::ofstream log(log_path, std::ios::app);
    if (!log) throw std::runtime_error("cannot append to " + log_path.string());
    const auto n_train = static_cast<std::uint64_t>(train_sets.size());
    const std::int64_t start = state->step;
    while (state->step < cfg.steps) {
        std::vector<const DomainSet*> batch;
        for (int i = 0; i < cfg.batch_size; ++i) batch.push_back(&train_sets[static_cast<std::size_t>(state->rng() % n_train)]);
        StepReport report;
        try {
            report = train_step(*state, batch);
        } catch (const NumericError& e) {
            write_text(out / "numeric_failure.txt", std::string(e.what()) + "\n");
            throw;
        }
        const std::int64_t step = state->step;
        std::vector<double> val_nmse;
        if (step % cfg.validate_every == 0 || step == cfg.steps) {
            val_nmse = validation_nmse(state->generator, val);
            const double score = mean_of(val_nmse);
            if (score < state->best_score) {
                state->best_score = score;
                state->best_step = step;
                save_checkpoint(*state, best_dir);
            }
            char msg[200];
            std::snprintf(msg, sizeof msg, "step %lld  g_total %.4f  d_total %.4f  val_nmse %.4f %.4f %.4f %.4f",
                          static_cast<long long>(step), report.g_total, report.d_total, val_nmse[0], val_nmse[1],
                          val_nmse[2], val_nmse[3]);
            say(msg);
            result.final_val_nmse = val_nmse;
        }
        log << log_row(&report, step, val_nmse.empty() ? nullptr : &val_nmse, n);
        log.flush();
        if (step % cfg.checkpoint_every == 0 || step == cfg.steps) save_checkpoint(*state, last_dir);
    }
    if (result.final_val_nmse.empty()) result.final_val_nmse = validation_nmse(state->generator, val);
    result.steps_run = state->step - start;
    result.best_step = state->best_step;
    return result;
}

}  // namespace collagan
