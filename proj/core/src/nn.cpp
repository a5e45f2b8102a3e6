#include "mbcr/nn.hpp"

#include <cmath>
#include <random>

namespace mbcr {

ConvUnit::ConvUnit(const std::string& unit_name, std::size_t c_in, std::size_t c_out, std::size_t kh,
                   std::size_t kw, ConvOptions opts)
    : name(unit_name),
      kernel(unit_name + "/kernel", Parameter::Kind::conv_kernel, Shape{c_out, c_in, kh, kw}, c_in * kh * kw),
      gamma(unit_name + "/gamma", Parameter::Kind::bn_gamma, Shape{c_out}, 1),
      beta(unit_name + "/beta", Parameter::Kind::bn_beta, Shape{c_out}, 1),
      stats(c_out),
      conv(opts) {
    gamma.value.data.assign(c_out, 1.0);
}

Var ConvUnit::forward(Tape& tape, Var input, Mode mode, const UnitConfig& cfg) {
    Var y = conv2d(input, tape.parameter(kernel), conv);
    if (cfg.order == UnitOrder::conv_bn_relu) {
        y = batchnorm(y, tape.parameter(gamma), tape.parameter(beta), stats, mode, cfg.bn);
        return relu(y);
    }
    y = relu(y);
    return batchnorm(y, tape.parameter(gamma), tape.parameter(beta), stats, mode, cfg.bn);
}

Shape ConvUnit::output_shape(const Shape& in) const {
    if (in.size() != 4) throw Error(name + ": expected rank-4 input, got " + to_string(in));
    if (in[1] != in_channels()) throw Error("channel mismatch");
    const Shape& k = kernel.value.shape;
    return Shape{in[0], out_channels(), conv_output_extent(in[2], k[2], conv.stride.h, conv.padding),
                 conv_output_extent(in[3], k[3], conv.stride.w, conv.padding)};
}

void ConvUnit::collect(std::vector<Parameter*>& out) {
    out.push_back(&kernel);
    out.push_back(&gamma);
    out.push_back(&beta);
}

void ConvUnit::collect_stats(std::vector<NamedStats>& out) { out.push_back({name, &stats}); }

DbcrnBlock::DbcrnBlock(const std::string& name, std::size_t c_in, std::size_t depth, std::size_t kernel_len) {
    const ConvOptions reduce{Stride{1, 2}, Padding::valid};
    const ConvOptions keep{Stride{1, 1}, Padding::same};
    branch_a = {ConvUnit(name + "/a0", c_in, depth, 1, kernel_len, reduce),
                ConvUnit(name + "/a1", depth, depth, 1, kernel_len, keep)};
    branch_b = {ConvUnit(name + "/b0", c_in, depth, 1, kernel_len, reduce),
                ConvUnit(name + "/b1", depth, depth, 1, kernel_len, keep)};
    res1 = ConvUnit(name + "/res1", depth, depth, 1, kernel_len, keep);
    res2 = ConvUnit(name + "/res2", depth, depth, 1, kernel_len, keep);
}

Var DbcrnBlock::branch_sum(Tape& tape, Var input, Mode mode, const UnitConfig& cfg) {
    Var a = branch_a[1].forward(tape, branch_a[0].forward(tape, input, mode, cfg), mode, cfg);
    Var b = branch_b[1].forward(tape, branch_b[0].forward(tape, input, mode, cfg), mode, cfg);
    return add(a, b);
}

Var DbcrnBlock::forward(Tape& tape, Var input, Mode mode, const UnitConfig& cfg) {
    Var s = branch_sum(tape, input, mode, cfg);
    Var stacked = res2.forward(tape, res1.forward(tape, s, mode, cfg), mode, cfg);
    return add(s, stacked);
}

Shape DbcrnBlock::output_shape(const Shape& in) const {
    return res2.output_shape(res1.output_shape(branch_a[1].output_shape(branch_a[0].output_shape(in))));
}

void DbcrnBlock::collect(std::vector<Parameter*>& out) {
    for (auto& u : branch_a) u.collect(out);
    for (auto& u : branch_b) u.collect(out);
    res1.collect(out);
    res2.collect(out);
}

void DbcrnBlock::collect_stats(std::vector<NamedStats>& out) {
    for (auto& u : branch_a) u.collect_stats(out);
    for (auto& u : branch_b) u.collect_stats(out);
    res1.collect_stats(out);
    res2.collect_stats(out);
}

FusionHead::FusionHead(FusionVariant v, std::size_t c, std::size_t n_leads, std::size_t t)
    : variant(v), channels(c), leads(n_leads), time(t) {
    const ConvOptions valid{Stride{1, 1}, Padding::valid};
    if (v == FusionVariant::T) conv.emplace("head/lead_fuse", c, c, n_leads, 1, valid);
    if (v == FusionVariant::L) conv.emplace("head/time_fuse", c, c, 1, t, valid);
}

std::size_t FusionHead::flat_size() const {
    switch (variant) {
        case FusionVariant::T: return channels * time;
        case FusionVariant::L: return channels * leads;
        case FusionVariant::F: break;
    }
    return channels * leads * time;
}

Var FusionHead::forward(Tape& tape, Var features, Mode mode, const UnitConfig& cfg) {
    const Shape& s = features.shape();
    if (s.size() != 4 || s[1] != channels || s[2] != leads || s[3] != time)
        throw Error("fusion head expects [N," + std::to_string(channels) + "," + std::to_string(leads) + "," +
                    std::to_string(time) + "], got " + to_string(s));
    Var y = conv ? conv->forward(tape, features, mode, cfg) : features;
    return reshape(y, Shape{s[0], flat_size()});
}

void FusionHead::collect(std::vector<Parameter*>& out) {
    if (conv) conv->collect(out);
}

void FusionHead::collect_stats(std::vector<NamedStats>& out) {
    if (conv) conv->collect_stats(out);
}

DenseLayer::DenseLayer(const std::string& name, std::size_t f_in, std::size_t f_out)
    : weight(name + "/weight", Parameter::Kind::dense_weight, Shape{f_out, f_in}, f_in),
      bias(name + "/bias", Parameter::Kind::dense_bias, Shape{f_out}, 1) {}

Var DenseLayer::forward(Tape& tape, Var input) {
    return dense(input, tape.parameter(weight), tape.parameter(bias));
}

void DenseLayer::collect(std::vector<Parameter*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
}

void init_params(std::span<Parameter* const> params, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (Parameter* p : params) {
        switch (p->kind) {
            case Parameter::Kind::conv_kernel:
            case Parameter::Kind::dense_weight: {
                std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(p->fan_in)));
                for (double& v : p->value.data) v = dist(rng);
                break;
            }
            case Parameter::Kind::bn_gamma: p->value.data.assign(p->value.size(), 1.0); break;
            case Parameter::Kind::bn_beta:
            case Parameter::Kind::dense_bias: p->value.data.assign(p->value.size(), 0.0); break;
        }
        p->zero_grad();
    }
}

}  // namespace mbcr
