#include "cli.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

#include "CLI11.hpp"
#include "mbcr/archive.hpp"
#include "mbcr/checks.hpp"

namespace mbcr::cli {
namespace {

using Json = nlohmann::ordered_json;

constexpr double kGradTolerance = 1e-4;

struct Failure : std::runtime_error {
    Failure(std::string category, const std::string& what) : std::runtime_error(what), category(std::move(category)) {}
    std::string category;
};

std::filesystem::path or_default(const std::string& value, const std::string& out, const char* name) {
    return value.empty() ? std::filesystem::path(out) / name : std::filesystem::path(value);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::trunc | std::ios::binary);
    if (!os) throw Failure("io", "cannot write '" + path.string() + "'");
    os << text;
    if (!os) throw Failure("io", "write failed for '" + path.string() + "'");
}

void ensure_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir))
        throw Failure("io", "cannot create output directory '" + dir.string() + "'");
}

std::string metrics_kv(const Metrics& m) {
    std::ostringstream os;
    char buf[64];
    auto fmt = [&](double v) {
        auto r = std::to_chars(buf, buf + sizeof buf, v);
        return std::string(buf, r.ptr);
    };
    os << "tp=" << m.tp << "\ntn=" << m.tn << "\nfp=" << m.fp << "\nfn=" << m.fn << "\nacc=" << fmt(m.acc())
       << "\nse=" << fmt(m.se()) << '\n';
    return os.str();
}

std::string config_block(const RunConfig& cfg) { return "# config " + cfg.to_json().dump() + "\n"; }

Dataset load_dataset(const RunConfig& cfg) {
    const auto path = cfg.cache_path();
    if (!std::filesystem::exists(path)) throw Failure("input", "missing cache '" + path.string() + "'");
    return load_cache(path);
}

std::vector<std::size_t> every_index(const Dataset& d) {
    std::vector<std::size_t> idx(d.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return idx;
}

int cmd_synth(const RunConfig& cfg, std::ostream& out) {
    const auto records = generate(cfg.synth_config());
    const std::filesystem::path dir(cfg.out);
    ensure_dir(dir);
    write_dataset(records, dir);
    std::size_t abnormal = 0;
    for (const auto& r : records) abnormal += r.label.value_or(0) == 1;
    out << "records=" << records.size() << "\nnormal=" << records.size() - abnormal << "\nabnormal=" << abnormal
        << "\nmanifest=" << (dir / "manifest.txt").string() << '\n';
    return 0;
}

int cmd_preprocess(const RunConfig& cfg, std::ostream& out) {
    const auto manifest = cfg.manifest_path();
    if (!std::filesystem::exists(manifest)) throw Failure("input", "missing manifest '" + manifest.string() + "'");
    std::vector<EcgRecord> records;
    std::vector<Rejection> unreadable;
    for (const auto& path : read_manifest(manifest)) {
        try {
            records.push_back(read_record_file(path));
        } catch (const Error& e) {
            unreadable.push_back({path.filename().string(), std::string("unreadable: ") + e.what()});
        }
    }
    PreprocessResult result = preprocess(records, cfg.preprocess_config());
    result.rejected.insert(result.rejected.begin(), unreadable.begin(), unreadable.end());

    ensure_dir(cfg.out);
    const auto cache = cfg.cache_path();
    save_cache(result.data, cache);
    std::ostringstream log;
    for (const auto& r : result.rejected) log << r.id << '\t' << r.reason << '\n';
    write_text(std::filesystem::path(cfg.out) / "rejected.txt", log.str());
    out << "cached=" << result.data.size() << "\nrejected=" << result.rejected.size() << "\ncache=" << cache.string()
        << '\n';
    return 0;
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
    const Dataset data = load_dataset(cfg);
    TrainConfig tc = cfg.train_config();
    tc.checkpoint = cfg.checkpoint_path();
    ensure_dir(cfg.out);
    Model model = Model::build(tc.model_spec(), tc.seed);
    const auto idx = every_index(data);
    const TrainResult tr = train(model, data, idx, tc);
    const Metrics m = evaluate(model, data, idx, tc.lead, tc.batch_size);

    std::ostringstream trace;
    char buf[64];
    for (std::size_t e = 0; e < tr.loss_trace.size(); ++e) {
        auto r = std::to_chars(buf, buf + sizeof buf, tr.loss_trace[e]);
        trace << e + 1 << '\t' << std::string(buf, r.ptr) << '\n';
    }
    const std::filesystem::path dir(cfg.out);
    write_text(dir / "loss_trace.txt", trace.str());
    write_text(dir / "train_report.txt", config_block(cfg) + metrics_kv(m));
    out << metrics_kv(m) << "checkpoint=" << tc.checkpoint.string() << '\n';
    return 0;
}

int cmd_eval(const RunConfig& cfg, std::ostream& out) {
    const auto ckpt = cfg.checkpoint_path();
    Model model = [&] {
        try {
            return load_checkpoint(ckpt);
        } catch (const Error& e) {
            throw Failure("checkpoint", ckpt.string() + ": " + e.what());
        }
    }();
    const Dataset data = load_dataset(cfg);
    std::optional<std::size_t> lead;
    if (model.spec().variant == Variant::SingleLead) {
        lead = cfg.train_config().lead;
        if (!lead) throw Failure("config", "checkpoint is single-lead; pass --lead");
    }
    const Metrics m = evaluate(model, data, every_index(data), lead, cfg.batch_size);
    out << metrics_kv(m);
    return 0;
}

int cmd_crossval(const RunConfig& cfg, std::ostream& out) {
    const Dataset data = load_dataset(cfg);
    const CrossvalResult r = crossval(data, cfg.train_config());
    ensure_dir(cfg.out);
    const std::span<const CrossvalResult> rs(&r, 1);
    const std::string table = format_crossval_table(rs);
    const std::filesystem::path dir(cfg.out);
    write_text(dir / "report.txt", config_block(cfg) + table);
    write_text(dir / "report.kv", format_crossval_kv(rs));
    out << table;
    return 0;
}

int cmd_ablation(const RunConfig& cfg, std::ostream& out) {
    const Dataset data = load_dataset(cfg);
    const AblationResult r = lead_ablation(data, cfg.train_config());
    ensure_dir(cfg.out);
    const std::string table = format_ablation_table(r);
    write_text(std::filesystem::path(cfg.out) / "ablation.txt", config_block(cfg) + table);
    out << table;
    return 0;
}

int cmd_gradcheck(const RunConfig& cfg, std::ostream& out) {
    double worst = 0.0;
    for (const auto& c : run_gradcheck_suite(cfg.seed)) {
        const bool ok = c.result.max_rel_error < kGradTolerance;
        out << (ok ? "ok   " : "FAIL ") << c.name << " max_rel_error=" << c.result.max_rel_error
            << " reduced_step=" << c.result.reduced_step << '\n';
        worst = std::max(worst, std::isnan(c.result.max_rel_error) ? INFINITY : c.result.max_rel_error);
    }
    out << "max_rel_error=" << worst << '\n';
    if (worst >= kGradTolerance)
        throw Failure("gradcheck", "max relative error " + std::to_string(worst) + " >= 1e-4");
    return 0;
}

template <class T>
T json_get(const Json& j, const char* key) {
    return j.at(key).get<T>();
}

}  // namespace

Json RunConfig::to_json() const {
    Json j;
    j["seed"] = seed;
    j["variant"] = variant;
    j["profile"] = profile;
    j["lead"] = lead;
    j["folds"] = folds;
    j["out"] = out;
    j["manifest"] = manifest;
    j["cache"] = cache;
    j["checkpoint"] = checkpoint;
    j["optimizer"] = optimizer;
    j["learning_rate"] = learning_rate;
    j["beta1"] = beta1;
    j["beta2"] = beta2;
    j["adam_eps"] = adam_eps;
    j["batch_size"] = batch_size;
    j["epochs"] = epochs;
    j["dropout_rate"] = dropout_rate;
    j["n_records"] = n_records;
    j["class_balance"] = class_balance;
    j["noise_std"] = noise_std;
    j["abnormality"] = abnormality;
    j["sample_rate_hz"] = sample_rate_hz;
    j["duration_s"] = duration_s;
    j["n_leads"] = n_leads;
    j["target_hz"] = target_hz;
    j["window_s"] = window_s;
    j["min_seconds"] = min_seconds;
    return j;
}

RunConfig RunConfig::from_json(const Json& j) {
    RunConfig c;
    c.seed = json_get<std::uint64_t>(j, "seed");
    c.variant = json_get<std::string>(j, "variant");
    c.profile = json_get<std::string>(j, "profile");
    c.lead = json_get<std::string>(j, "lead");
    c.folds = json_get<std::size_t>(j, "folds");
    c.out = json_get<std::string>(j, "out");
    c.manifest = json_get<std::string>(j, "manifest");
    c.cache = json_get<std::string>(j, "cache");
    c.checkpoint = json_get<std::string>(j, "checkpoint");
    c.optimizer = json_get<std::string>(j, "optimizer");
    c.learning_rate = json_get<double>(j, "learning_rate");
    c.beta1 = json_get<double>(j, "beta1");
    c.beta2 = json_get<double>(j, "beta2");
    c.adam_eps = json_get<double>(j, "adam_eps");
    c.batch_size = json_get<std::size_t>(j, "batch_size");
    c.epochs = json_get<std::size_t>(j, "epochs");
    c.dropout_rate = json_get<double>(j, "dropout_rate");
    c.n_records = json_get<std::size_t>(j, "n_records");
    c.class_balance = json_get<double>(j, "class_balance");
    c.noise_std = json_get<double>(j, "noise_std");
    c.abnormality = json_get<std::string>(j, "abnormality");
    c.sample_rate_hz = json_get<int>(j, "sample_rate_hz");
    c.duration_s = json_get<double>(j, "duration_s");
    c.n_leads = json_get<std::size_t>(j, "n_leads");
    c.target_hz = json_get<int>(j, "target_hz");
    c.window_s = json_get<double>(j, "window_s");
    c.min_seconds = json_get<double>(j, "min_seconds");
    return c;
}

std::filesystem::path RunConfig::manifest_path() const { return or_default(manifest, out, "manifest.txt"); }
std::filesystem::path RunConfig::cache_path() const { return or_default(cache, out, "cache.mbcr"); }
std::filesystem::path RunConfig::checkpoint_path() const { return or_default(checkpoint, out, "model.mbcr"); }

TrainConfig RunConfig::train_config() const {
    TrainConfig t;
    t.optimizer = parse_optimizer(optimizer);
    t.learning_rate = learning_rate;
    t.beta1 = beta1;
    t.beta2 = beta2;
    t.adam_eps = adam_eps;
    t.batch_size = batch_size;
    t.epochs = epochs;
    t.dropout_rate = dropout_rate;
    t.seed = seed;
    t.variant = parse_variant(variant);
    t.profile = profile;
    if (!lead.empty()) {
        t.lead = lead_index(lead);
        if (!t.lead) throw Failure("config", "unknown lead '" + lead + "'");
        t.variant = Variant::SingleLead;
    }
    t.n_folds = folds;
    t.validate();
    t.model_spec();
    return t;
}

SynthConfig RunConfig::synth_config() const {
    SynthConfig s;
    s.seed = seed;
    s.n_records = n_records;
    s.n_leads = n_leads;
    s.sample_rate_hz = sample_rate_hz ? sample_rate_hz : (profile == "mini" ? 50 : 500);
    s.duration_s = duration_s;
    s.class_balance = class_balance;
    s.noise_std = noise_std;
    s.abnormality = parse_abnormality(abnormality);
    return s;
}

PreprocessConfig RunConfig::preprocess_config() const {
    PreprocessConfig p = PreprocessConfig::profile(profile);
    if (target_hz) p.target_hz = target_hz;
    p.window_s = window_s;
    p.min_seconds = min_seconds;
    return p;
}

RunConfig resolve_config(const std::optional<std::filesystem::path>& file, const Json& overrides) {
    Json merged = RunConfig{}.to_json();
    auto layer = [&](const Json& j, const std::string& source) {
        if (!j.is_object()) throw Failure("config", source + ": expected a JSON object");
        for (const auto& [key, value] : j.items()) {
            if (!merged.contains(key)) throw Failure("config", source + ": unknown key '" + key + "'");
            const Json& current = merged[key];
            const bool compatible = (current.is_string() && value.is_string()) ||
                                    (current.is_number() && value.is_number());
            if (!compatible) throw Failure("config", source + ": wrong type for '" + key + "'");
            if (current.is_number_integer() && !value.is_number_integer())
                throw Failure("config", source + ": '" + key + "' must be an integer");
            merged[key] = value;
        }
    };
    if (file) {
        std::ifstream is(*file);
        if (!is) throw Failure("config", "cannot open config '" + file->string() + "'");
        Json j;
        try {
            j = Json::parse(is);
        } catch (const nlohmann::json::exception& e) {
            throw Failure("config", file->string() + ": " + e.what());
        }
        layer(j, file->string());
    }
    layer(overrides, "command line");
    try {
        return RunConfig::from_json(merged);
    } catch (const nlohmann::json::exception& e) {
        throw Failure("config", e.what());
    }
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"MBCRNet multi-lead ECG classifier toolkit", "mbcr"};
    app.require_subcommand(1);
    std::string config_path;
    Json overrides = Json::object();

    struct Flag {
        const char* flag;
        const char* key;
        const char* help;
        enum { text, integer, real } kind;
    };
    static const Flag kFlags[] = {
        {"--seed", "seed", "random seed", Flag::integer},
        {"--variant", "variant", "T, L, F or single", Flag::text},
        {"--lead", "lead", "single-lead run on this lead (II, III, V1..V6)", Flag::text},
        {"--profile", "profile", "paper or mini", Flag::text},
        {"--folds", "folds", "cross-validation folds", Flag::integer},
        {"--out", "out", "output directory", Flag::text},
        {"--manifest", "manifest", "record manifest (default <out>/manifest.txt)", Flag::text},
        {"--cache", "cache", "preprocessed cache (default <out>/cache.mbcr)", Flag::text},
        {"--checkpoint", "checkpoint", "model checkpoint (default <out>/model.mbcr)", Flag::text},
        {"--optimizer", "optimizer", "adam or sgd", Flag::text},
        {"--lr", "learning_rate", "learning rate", Flag::real},
        {"--batch-size", "batch_size", "mini-batch size", Flag::integer},
        {"--epochs", "epochs", "training epochs", Flag::integer},
        {"--dropout", "dropout_rate", "dropout rate after fc1", Flag::real},
        {"--n", "n_records", "number of synthetic records", Flag::integer},
        {"--balance", "class_balance", "fraction of abnormal synthetic records", Flag::real},
        {"--noise", "noise_std", "synthetic noise std (mV)", Flag::real},
        {"--abnormality", "abnormality", "irregular_rhythm, lead_localized_inversion or both", Flag::text},
        {"--rate", "sample_rate_hz", "synthetic sample rate (0: profile default)", Flag::integer},
        {"--duration", "duration_s", "synthetic record duration (s)", Flag::real},
        {"--leads", "n_leads", "synthetic lead count (8 or 12)", Flag::integer},
        {"--target-hz", "target_hz", "preprocess target rate (0: profile default)", Flag::integer},
    };

    std::map<std::string, std::string> raw;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON config file");
        for (const Flag& f : kFlags)
            sub->add_option_function<std::string>(
                f.flag, [&raw, key = std::string(f.key)](const std::string& v) { raw[key] = v; }, f.help);
    };

    std::string command;
    const std::vector<std::pair<const char*, const char*>> commands = {
        {"synth", "generate synthetic records and a manifest"},
        {"preprocess", "filter, downsample, select leads and window into a cache"},
        {"train", "train a model on the cache and write a checkpoint"},
        {"eval", "evaluate a checkpoint on the cache"},
        {"crossval", "stratified k-fold cross-validation report"},
        {"ablation", "single-lead vs fused comparison"},
        {"gradcheck", "finite-difference gradient checks"},
    };
    for (const auto& [name, help] : commands) {
        CLI::App* sub = app.add_subcommand(name, help);
        add_common(sub);
        sub->callback([&command, n = std::string(name)] { command = n; });
    }

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error[usage]: " << e.what() << '\n';
        return 2;
    }
    if (command.empty()) {
        err << "error[usage]: no command given (try --help)\n";
        return 2;
    }

    try {
        for (const Flag& f : kFlags) {
            auto it = raw.find(f.key);
            if (it == raw.end()) continue;
            try {
                switch (f.kind) {
                    case Flag::text: overrides[f.key] = it->second; break;
                    case Flag::integer: overrides[f.key] = std::stoll(it->second); break;
                    case Flag::real: overrides[f.key] = std::stod(it->second); break;
                }
            } catch (const std::logic_error&) {
                throw Failure("usage", std::string("bad value for ") + f.flag + ": '" + it->second + "'");
            }
        }
        const RunConfig cfg =
            resolve_config(config_path.empty() ? std::nullopt : std::optional<std::filesystem::path>(config_path),
                           overrides);
        if (command == "synth") return cmd_synth(cfg, out);
        if (command == "preprocess") return cmd_preprocess(cfg, out);
        if (command == "train") return cmd_train(cfg, out);
        if (command == "eval") return cmd_eval(cfg, out);
        if (command == "crossval") return cmd_crossval(cfg, out);
        if (command == "ablation") return cmd_ablation(cfg, out);
        if (command == "gradcheck") return cmd_gradcheck(cfg, out);
        throw Failure("usage", "unknown command");
    } catch (const Failure& f) {
        err << "error[" << f.category << "]: " << f.what() << '\n';
    } catch (const Error& e) {
        err << "error[" << (command.empty() ? "run" : command) << "]: " << e.what() << '\n';
    } catch (const std::exception& e) {
        err << "error[internal]: " << e.what() << '\n';
    }
    return 1;
}

}  // namespace mbcr::cli
