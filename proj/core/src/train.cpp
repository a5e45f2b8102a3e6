#include "mbcr/train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

#include "mbcr/archive.hpp"
#include "mbcr/parallel.hpp"

namespace mbcr {
namespace {

std::string shortest(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::vector<LabeledId> labeled_ids(const Dataset& data) {
    std::vector<LabeledId> ids;
    ids.reserve(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) ids.push_back({data.ids[i], data.labels[i]});
    return ids;
}

}  // namespace

std::string to_string(Optimizer o) { return o == Optimizer::sgd ? "sgd" : "adam"; }

Optimizer parse_optimizer(std::string_view text) {
    if (text == "sgd") return Optimizer::sgd;
    if (text == "adam") return Optimizer::adam;
    throw Error("unknown optimizer '" + std::string(text) + "'");
}

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw Error("learning rate must be nonnegative");
    if (batch_size == 0) throw Error("batch size must be at least 1");
    if (!(dropout_rate >= 0.0) || dropout_rate >= 1.0) throw Error("dropout rate must be in [0, 1)");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw Error("adam betas must be in [0, 1)");
    if (!(adam_eps > 0.0)) throw Error("adam eps must be positive");
    if (n_folds < 2) throw Error("need at least 2 folds");
    if (lead && *lead >= kCanonicalLeads.size()) throw Error("lead index out of range");
}

ModelSpec TrainConfig::model_spec() const {
    const bool single = variant == Variant::SingleLead || lead.has_value();
    if (single && !lead) throw Error("single-lead runs need a lead");
    ModelSpec spec = ModelSpec::profile(profile, single ? Variant::SingleLead : variant);
    spec.dropout_rate = dropout_rate;
    return spec;
}

void adam_step(std::span<Parameter* const> params, AdamState& state, double lr, double beta1, double beta2,
               double eps) {
    if (state.m.size() != params.size()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
    }
    ++state.step;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Parameter& p = *params[k];
        auto& m = state.m[k];
        auto& v = state.v[k];
        if (m.size() != p.value.size()) {
            m.assign(p.value.size(), 0.0);
            v.assign(p.value.size(), 0.0);
        }
        if (p.grad.size() != p.value.size()) throw Error("gradient size mismatch for " + p.name);
        for (std::size_t i = 0; i < m.size(); ++i) {
            const double g = p.grad[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            p.value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
        }
    }
}

void sgd_step(std::span<Parameter* const> params, double lr) {
    for (Parameter* p : params) {
        if (p->grad.size() != p->value.size()) throw Error("gradient size mismatch for " + p->name);
        for (std::size_t i = 0; i < p->grad.size(); ++i) p->value[i] -= lr * p->grad[i];
    }
}

double Metrics::acc() const {
    const std::size_t n = total();
    return n ? static_cast<double>(tp + tn) / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

double Metrics::se() const {
    return tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : std::numeric_limits<double>::quiet_NaN();
}

Metrics Metrics::from(std::span<const int> predictions, std::span<const int> labels) {
    if (predictions.size() != labels.size()) throw Error("prediction/label count mismatch");
    Metrics m;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const bool pos = predictions[i] == 1;
        if (labels[i] == 1) (pos ? m.tp : m.fn)++;
        else (pos ? m.fp : m.tn)++;
    }
    return m;
}

int predicted_class(std::span<const double> probs) {
    int best = 0;
    for (std::size_t k = 1; k < probs.size(); ++k)
        if (probs[k] > probs[static_cast<std::size_t>(best)]) best = static_cast<int>(k);
    return best;
}

TrainResult train(Model& model, const Dataset& data, std::span<const std::size_t> indices, const TrainConfig& cfg) {
    cfg.validate();
    if (indices.empty()) throw Error("empty training set");
    auto params = model.parameters();
    AdamState adam;
    std::mt19937_64 rng(derive_seed(cfg.seed, 0x5eed));
    std::vector<std::size_t> order(indices.begin(), indices.end());
    TrainResult result;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::span<const std::size_t> idx(order.data() + start, end - start);
            Tensor x = data.batch(idx, cfg.lead);
            std::vector<int> y = data.batch_labels(idx);

            for (Parameter* p : params) p->zero_grad();
            Tape tape;
            Var logits = model.forward(tape, x, Mode::train, derive_seed(cfg.seed, ++step));
            SoftmaxXent out = softmax_xent(logits, y);
            const double loss = out.loss.value()[0];
            if (!std::isfinite(loss))
                throw Error("loss diverged at epoch " + std::to_string(epoch + 1) + ", batch " +
                            std::to_string(batches + 1));
            tape.backward(out.loss);
            if (cfg.optimizer == Optimizer::adam)
                adam_step(params, adam, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);
            else
                sgd_step(params, cfg.learning_rate);
            loss_sum += loss;
            ++batches;
        }
        result.loss_trace.push_back(loss_sum / static_cast<double>(batches));
    }
    if (!cfg.checkpoint.empty()) save_checkpoint(model, cfg.checkpoint);
    return result;
}

std::vector<int> predict(Model& model, const Dataset& data, std::span<const std::size_t> indices,
                         std::optional<std::size_t> lead, std::size_t batch_size) {
    std::vector<int> out;
    out.reserve(indices.size());
    for (std::size_t start = 0; start < indices.size(); start += batch_size) {
        const std::size_t end = std::min(indices.size(), start + batch_size);
        Tensor probs = model.predict(data.batch(indices.subspan(start, end - start), lead));
        const std::size_t k = probs.shape[1];
        for (std::size_t r = 0; r < probs.shape[0]; ++r)
            out.push_back(predicted_class(std::span<const double>(probs.data.data() + r * k, k)));
    }
    return out;
}

Metrics evaluate(Model& model, const Dataset& data, std::span<const std::size_t> indices,
                 std::optional<std::size_t> lead, std::size_t batch_size) {
    if (indices.empty()) throw Error("empty test set");
    const std::vector<int> preds = predict(model, data, indices, lead, batch_size);
    return Metrics::from(preds, data.batch_labels(indices));
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> fold_split(const Dataset& data,
                                                                         const FoldPlan& plan, std::size_t fold) {
    if (fold >= plan.n_folds) throw Error("fold index out of range");
    std::vector<std::size_t> train_idx, test_idx;
    std::set<std::string> seen;
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (!seen.insert(data.ids[i]).second) throw Error("duplicate record id '" + data.ids[i] + "' in dataset");
        auto it = plan.assignments.find(data.ids[i]);
        if (it == plan.assignments.end()) continue;
        (it->second == fold ? test_idx : train_idx).push_back(i);
    }
    std::set<std::string> train_ids;
    for (std::size_t i : train_idx) train_ids.insert(data.ids[i]);
    for (std::size_t i : test_idx)
        if (train_ids.count(data.ids[i])) throw Error("test id '" + data.ids[i] + "' leaked into training set");
    return {std::move(train_idx), std::move(test_idx)};
}

CrossvalResult crossval(const Dataset& data, const TrainConfig& cfg) {
    cfg.validate();
    const ModelSpec spec = cfg.model_spec();
    CrossvalResult result;
    result.variant = spec.variant;
    const auto ids = labeled_ids(data);
    result.plan = make_folds(ids, cfg.seed, cfg.n_folds);
    result.folds.resize(cfg.n_folds);

    parallel_for(cfg.n_folds, [&](std::size_t f) {
        auto [train_idx, test_idx] = fold_split(data, result.plan, f);
        TrainConfig fold_cfg = cfg;
        fold_cfg.seed = derive_seed(cfg.seed, f + 1);
        fold_cfg.checkpoint.clear();
        Model model = Model::build(spec, fold_cfg.seed);
        FoldResult& r = result.folds[f];
        r.loss_trace = train(model, data, train_idx, fold_cfg).loss_trace;
        r.metrics = evaluate(model, data, test_idx, cfg.lead, cfg.batch_size);
        r.n_train = train_idx.size();
        r.n_test = test_idx.size();
    });

    double acc = 0.0, se = 0.0;
    std::size_t se_count = 0;
    for (const auto& f : result.folds) {
        acc += f.metrics.acc();
        if (!std::isnan(f.metrics.se())) {
            se += f.metrics.se();
            ++se_count;
        }
    }
    result.mean_acc = acc / static_cast<double>(result.folds.size());
    result.mean_se = se_count ? se / static_cast<double>(se_count) : std::numeric_limits<double>::quiet_NaN();
    return result;
}

AblationResult lead_ablation(const Dataset& data, const TrainConfig& cfg) {
    cfg.validate();
    const auto ids = labeled_ids(data);
    const FoldPlan plan = make_folds(ids, cfg.seed, cfg.n_folds);
    const auto split = fold_split(data, plan, 0);
    const std::vector<std::size_t>& train_idx = split.first;
    const std::vector<std::size_t>& test_idx = split.second;

    AblationResult result;
    result.fused_variant = cfg.variant == Variant::SingleLead ? Variant::L : cfg.variant;
    const std::size_t n_leads = kCanonicalLeads.size();
    std::vector<Metrics> metrics(n_leads + 1);
    parallel_for(n_leads + 1, [&](std::size_t job) {
        TrainConfig run = cfg;
        run.checkpoint.clear();
        run.seed = derive_seed(cfg.seed, 0xab1a);
        if (job == 0) {
            run.variant = result.fused_variant;
            run.lead.reset();
        } else {
            run.variant = Variant::SingleLead;
            run.lead = job - 1;
        }
        Model model = Model::build(run.model_spec(), run.seed);
        train(model, data, train_idx, run);
        metrics[job] = evaluate(model, data, test_idx, run.lead, run.batch_size);
    });
    result.fused = metrics[0];
    for (std::size_t l = 0; l < n_leads; ++l) result.single_lead.emplace_back(kCanonicalLeads[l], metrics[l + 1]);
    return result;
}

std::string format_percent(double v) {
    if (std::isnan(v)) return "n/a";
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << 100.0 * v << '%';
    return os.str();
}

std::string format_crossval_table(std::span<const CrossvalResult> results) {
    std::ostringstream os;
    os << std::left << std::setw(10) << "Fold";
    for (const auto& r : results) os << std::right << std::setw(20) << ("MBCRNet-" + to_string(r.variant));
    os << '\n' << std::left << std::setw(10) << "";
    for (std::size_t i = 0; i < results.size(); ++i) os << std::right << std::setw(10) << "ACC" << std::setw(10) << "Se";
    os << '\n';
    const std::size_t n_folds = results.empty() ? 0 : results.front().folds.size();
    for (std::size_t f = 0; f < n_folds; ++f) {
        os << std::left << std::setw(10) << ("Fold-" + std::to_string(f + 1));
        for (const auto& r : results)
            os << std::right << std::setw(10) << format_percent(r.folds.at(f).metrics.acc()) << std::setw(10)
               << format_percent(r.folds.at(f).metrics.se());
        os << '\n';
    }
    os << std::left << std::setw(10) << "Average";
    for (const auto& r : results)
        os << std::right << std::setw(10) << format_percent(r.mean_acc) << std::setw(10) << format_percent(r.mean_se);
    os << '\n';
    return os.str();
}

std::string format_crossval_kv(std::span<const CrossvalResult> results) {
    std::ostringstream os;
    for (const auto& r : results) {
        const std::string v = to_string(r.variant);
        os << v << ".folds=" << r.folds.size() << '\n';
        for (std::size_t f = 0; f < r.folds.size(); ++f) {
            const auto& m = r.folds[f].metrics;
            const std::string p = v + ".fold." + std::to_string(f + 1) + ".";
            os << p << "tp=" << m.tp << '\n'
               << p << "tn=" << m.tn << '\n'
               << p << "fp=" << m.fp << '\n'
               << p << "fn=" << m.fn << '\n'
               << p << "acc=" << shortest(m.acc()) << '\n'
               << p << "se=" << shortest(m.se()) << '\n'
               << p << "n_train=" << r.folds[f].n_train << '\n'
               << p << "n_test=" << r.folds[f].n_test << '\n';
        }
        os << v << ".average.acc=" << shortest(r.mean_acc) << '\n' << v << ".average.se=" << shortest(r.mean_se) << '\n';
    }
    return os.str();
}

std::string format_ablation_table(const AblationResult& result) {
    std::ostringstream os;
    os << std::left << std::setw(16) << "Model" << std::right << std::setw(10) << "ACC" << std::setw(10) << "Se" << '\n';
    double mean = 0.0;
    for (const auto& [lead, m] : result.single_lead) {
        os << std::left << std::setw(16) << ("lead " + lead) << std::right << std::setw(10) << format_percent(m.acc())
           << std::setw(10) << format_percent(m.se()) << '\n';
        mean += m.acc();
    }
    if (!result.single_lead.empty()) mean /= static_cast<double>(result.single_lead.size());
    os << std::left << std::setw(16) << "single mean" << std::right << std::setw(10) << format_percent(mean) << '\n';
    os << std::left << std::setw(16) << ("MBCRNet-" + to_string(result.fused_variant)) << std::right << std::setw(10)
       << format_percent(result.fused.acc()) << std::setw(10) << format_percent(result.fused.se()) << '\n';
    return os.str();
}

}  // namespace mbcr
