#include "mbcr/model.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <map>
#include <sstream>

namespace mbcr {
namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

FusionVariant fusion_of(Variant v) {
    switch (v) {
        case Variant::T: return FusionVariant::T;
        case Variant::L: return FusionVariant::L;
        default: return FusionVariant::F;
    }
}

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::size_t parse_size(const std::string& key, const std::string& v) {
    std::size_t out = 0;
    auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size()) throw Error("model spec: bad value for " + key);
    return out;
}

double parse_double(const std::string& key, const std::string& v) {
    double out = 0;
    auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size()) throw Error("model spec: bad value for " + key);
    return out;
}

}  // namespace

std::string to_string(Variant v) {
    switch (v) {
        case Variant::T: return "T";
        case Variant::L: return "L";
        case Variant::F: return "F";
        case Variant::SingleLead: return "single";
    }
    return "?";
}

Variant parse_variant(std::string_view text) {
    const std::string s = lower(text);
    if (s == "t") return Variant::T;
    if (s == "l") return Variant::L;
    if (s == "f") return Variant::F;
    if (s == "single" || s == "singlelead") return Variant::SingleLead;
    throw Error("unknown variant '" + std::string(text) + "'");
}

ModelSpec ModelSpec::paper(Variant v) {
    ModelSpec s;
    s.variant = v;
    if (v == Variant::SingleLead) s.n_leads = 1;
    return s;
}

ModelSpec ModelSpec::mini(Variant v) {
    ModelSpec s = paper(v);
    s.time_len = 200;
    s.kernel_len = 5;
    s.conv1_depth = 4;
    s.block_depths = {4, 8, 8, 8};
    s.fc_hidden = 32;
    return s;
}

ModelSpec ModelSpec::profile(std::string_view name, Variant v) {
    const std::string s = lower(name);
    if (s == "paper") return paper(v);
    if (s == "mini") return mini(v);
    throw Error("unknown profile '" + std::string(name) + "'");
}

void ModelSpec::validate() const {
    if (n_leads == 0 || time_len == 0 || kernel_len == 0) throw Error("model spec: extents must be positive");
    if (conv1_depth == 0 || fc_hidden == 0) throw Error("model spec: depths must be positive");
    for (std::size_t d : block_depths)
        if (d == 0) throw Error("model spec: depths must be positive");
    if (n_classes < 2) throw Error("model spec: need at least 2 classes");
    if (!(dropout_rate >= 0.0) || dropout_rate >= 1.0) throw Error("model spec: dropout rate must be in [0, 1)");
    if (variant == Variant::SingleLead && n_leads != 1) throw Error("model spec: single-lead variant needs n_leads=1");

    std::size_t t = time_len;
    auto reduce = [&](const std::string& stage) {
        if (t < kernel_len)
            throw Error("shape infeasible at " + stage + ": time extent " + std::to_string(t) +
                        " < kernel " + std::to_string(kernel_len));
        t = (t - kernel_len) / 2 + 1;
    };
    reduce("conv1");
    for (int b = 1; b <= 4; ++b) reduce("block" + std::to_string(b));
}

std::string ModelSpec::to_text() const {
    std::ostringstream os;
    os << "variant=" << to_string(variant) << '\n'
       << "n_leads=" << n_leads << '\n'
       << "time_len=" << time_len << '\n'
       << "kernel_len=" << kernel_len << '\n'
       << "conv1_depth=" << conv1_depth << '\n'
       << "block_depths=" << block_depths[0] << ',' << block_depths[1] << ',' << block_depths[2] << ','
       << block_depths[3] << '\n'
       << "fc_hidden=" << fc_hidden << '\n'
       << "n_classes=" << n_classes << '\n'
       << "dropout_rate=" << format_double(dropout_rate) << '\n'
       << "unit_order=" << (unit_order == UnitOrder::conv_bn_relu ? "conv_bn_relu" : "conv_relu_bn") << '\n'
       << "bn_eps=" << format_double(bn_eps) << '\n'
       << "bn_momentum=" << format_double(bn_momentum) << '\n';
    return os.str();
}

ModelSpec ModelSpec::from_text(std::string_view text) {
    std::map<std::string, std::string> kv;
    std::istringstream is{std::string(text)};
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw Error("model spec: malformed line '" + line + "'");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    auto get = [&](const std::string& k) -> const std::string& {
        auto it = kv.find(k);
        if (it == kv.end()) throw Error("model spec: missing key " + k);
        return it->second;
    };
    ModelSpec s;
    s.variant = parse_variant(get("variant"));
    s.n_leads = parse_size("n_leads", get("n_leads"));
    s.time_len = parse_size("time_len", get("time_len"));
    s.kernel_len = parse_size("kernel_len", get("kernel_len"));
    s.conv1_depth = parse_size("conv1_depth", get("conv1_depth"));
    {
        std::istringstream ds(get("block_depths"));
        std::string item;
        for (std::size_t i = 0; i < 4; ++i) {
            if (!std::getline(ds, item, ',')) throw Error("model spec: block_depths needs 4 values");
            s.block_depths[i] = parse_size("block_depths", item);
        }
    }
    s.fc_hidden = parse_size("fc_hidden", get("fc_hidden"));
    s.n_classes = parse_size("n_classes", get("n_classes"));
    s.dropout_rate = parse_double("dropout_rate", get("dropout_rate"));
    const std::string& order = get("unit_order");
    if (order == "conv_bn_relu") s.unit_order = UnitOrder::conv_bn_relu;
    else if (order == "conv_relu_bn") s.unit_order = UnitOrder::conv_relu_bn;
    else throw Error("model spec: unknown unit_order " + order);
    s.bn_eps = parse_double("bn_eps", get("bn_eps"));
    s.bn_momentum = parse_double("bn_momentum", get("bn_momentum"));
    return s;
}

Model Model::build(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    Model m;
    m.spec_ = spec;
    const std::size_t k = spec.kernel_len;
    m.conv1 = ConvUnit("conv1", 1, spec.conv1_depth, 1, k, ConvOptions{Stride{1, 2}, Padding::valid});
    std::size_t c = spec.conv1_depth;
    std::size_t t = (spec.time_len - k) / 2 + 1;
    for (std::size_t b = 0; b < 4; ++b) {
        m.blocks[b] = DbcrnBlock("block" + std::to_string(b + 1), c, spec.block_depths[b], k);
        c = spec.block_depths[b];
        t = (t - k) / 2 + 1;
    }
    m.head = FusionHead(fusion_of(spec.variant), c, spec.n_leads, t);
    m.fc1 = DenseLayer("fc1", m.head.flat_size(), spec.fc_hidden);
    m.fc2 = DenseLayer("fc2", spec.fc_hidden, spec.n_classes);
    init_params(m.parameters(), seed);
    return m;
}

UnitConfig Model::unit_config() const {
    UnitConfig cfg;
    cfg.order = spec_.unit_order;
    cfg.bn.eps = spec_.bn_eps;
    cfg.bn.momentum = spec_.bn_momentum;
    return cfg;
}

Var Model::forward(Tape& tape, const Tensor& batch, Mode mode, std::uint64_t dropout_seed,
                   std::vector<StageShape>* trace) {
    return forward(tape, tape.constant(batch), mode, dropout_seed, trace);
}

Var Model::forward(Tape& tape, Var batch, Mode mode, std::uint64_t dropout_seed, std::vector<StageShape>* trace) {
    const Shape& s = batch.shape();
    if (s.size() != 3 || s[1] != spec_.n_leads || s[2] != spec_.time_len)
        throw Error("input extent mismatch: expected [N," + std::to_string(spec_.n_leads) + "," +
                    std::to_string(spec_.time_len) + "], got " + to_string(s));
    auto note = [&](const char* stage, Var v) {
        if (trace) trace->push_back({stage, v.shape()});
        return v;
    };
    const UnitConfig cfg = unit_config();
    Var x = reshape(batch, Shape{s[0], 1, s[1], s[2]});
    x = note("conv1", conv1.forward(tape, x, mode, cfg));
    static const char* const kBranch[] = {"block1/branches", "block2/branches", "block3/branches", "block4/branches"};
    static const char* const kBlock[] = {"block1", "block2", "block3", "block4"};
    for (std::size_t b = 0; b < 4; ++b) {
        Var sum = note(kBranch[b], blocks[b].branch_sum(tape, x, mode, cfg));
        Var stacked = blocks[b].res2.forward(tape, blocks[b].res1.forward(tape, sum, mode, cfg), mode, cfg);
        x = note(kBlock[b], add(sum, stacked));
    }
    if (head.conv && trace) {
        // Record the fused map before flattening.
        const Shape fused = head.conv->output_shape(x.shape());
        trace->push_back({"head", fused});
    }
    x = note("flatten", head.forward(tape, x, mode, cfg));
    x = relu(fc1.forward(tape, x));
    x = note("fc1", dropout(x, spec_.dropout_rate, mode, dropout_seed));
    return note("fc2", fc2.forward(tape, x));
}

Tensor Model::predict(const Tensor& batch) {
    Tape tape;
    Var logits = forward(tape, batch, Mode::eval);
    return softmax(logits.value());
}

std::vector<StageShape> Model::shape_walk(std::size_t batch) const {
    std::vector<StageShape> out;
    Shape s{batch, 1, spec_.n_leads, spec_.time_len};
    s = conv1.output_shape(s);
    out.push_back({"conv1", s});
    for (std::size_t b = 0; b < 4; ++b) {
        const DbcrnBlock& blk = blocks[b];
        s = blk.branch_a[1].output_shape(blk.branch_a[0].output_shape(s));
        out.push_back({"block" + std::to_string(b + 1) + "/branches", s});
        s = blk.res2.output_shape(blk.res1.output_shape(s));
        out.push_back({"block" + std::to_string(b + 1), s});
    }
    if (head.conv) out.push_back({"head", head.conv->output_shape(s)});
    out.push_back({"flatten", Shape{batch, head.flat_size()}});
    out.push_back({"fc1", Shape{batch, spec_.fc_hidden}});
    out.push_back({"fc2", Shape{batch, spec_.n_classes}});
    return out;
}

std::vector<Parameter*> Model::parameters() {
    std::vector<Parameter*> out;
    conv1.collect(out);
    for (auto& b : blocks) b.collect(out);
    head.collect(out);
    fc1.collect(out);
    fc2.collect(out);
    return out;
}

std::vector<NamedStats> Model::running_stats() {
    std::vector<NamedStats> out;
    conv1.collect_stats(out);
    for (auto& b : blocks) b.collect_stats(out);
    head.collect_stats(out);
    return out;
}

std::size_t Model::param_count() const {
    std::size_t n = 0;
    for (const Parameter* p : const_cast<Model*>(this)->parameters()) n += p->value.size();
    return n;
}

}  // namespace mbcr
