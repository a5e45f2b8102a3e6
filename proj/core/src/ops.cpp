#include "mbcr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mbcr {
namespace {

using Index = std::ptrdiff_t;

struct ConvGeometry {
    std::size_t n, c_in, h, w;
    std::size_t c_out, kh, kw;
    std::size_t sh, sw;
    std::size_t oh, ow;
    Index pad_h, pad_w;  // leading pad
};

ConvGeometry conv_geometry(const Shape& in, const Shape& k, const ConvOptions& opts) {
    if (in.size() != 4) throw Error("conv2d input must be rank 4, got " + to_string(in));
    if (k.size() != 4) throw Error("conv2d kernel must be rank 4, got " + to_string(k));
    if (in[1] != k[1]) throw Error("channel mismatch");
    if (opts.stride.h == 0 || opts.stride.w == 0) throw Error("stride must be positive");
    ConvGeometry g{};
    g.n = in[0];
    g.c_in = in[1];
    g.h = in[2];
    g.w = in[3];
    g.c_out = k[0];
    g.kh = k[2];
    g.kw = k[3];
    g.sh = opts.stride.h;
    g.sw = opts.stride.w;
    g.oh = conv_output_extent(g.h, g.kh, g.sh, opts.padding);
    g.ow = conv_output_extent(g.w, g.kw, g.sw, opts.padding);
    if (opts.padding == Padding::same) {
        g.pad_h = static_cast<Index>(same_padding(g.kh).before);
        g.pad_w = static_cast<Index>(same_padding(g.kw).before);
    }
    return g;
}

// Output columns [lo, hi) whose input column ow*sw + j - pad stays inside [0, w).
std::pair<std::size_t, std::size_t> column_range(const ConvGeometry& g, std::size_t j) {
    const Index sw = static_cast<Index>(g.sw);
    const Index shift = static_cast<Index>(j) - g.pad_w;
    Index lo = 0;
    if (shift < 0) lo = (-shift + sw - 1) / sw;
    const Index last = static_cast<Index>(g.w) - 1 - shift;
    if (last < 0) return {0, 0};
    Index hi = std::min<Index>(last / sw + 1, static_cast<Index>(g.ow));
    if (lo >= hi) return {0, 0};
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// Flat input index of the first tap for output column `lo`.
std::size_t tap_start(const ConvGeometry& g, std::size_t in_row, std::size_t j, std::size_t lo) {
    return in_row + static_cast<std::size_t>(static_cast<Index>(lo * g.sw + j) - g.pad_w);
}

// Calls body(out_row, in_row, kernel_index, j, lo, hi)
// for every contributing (n, co, ci, i, oh, j) in a fixed order.
template <class Body>
void for_each_tap(const ConvGeometry& g, Body&& body) {
    for (std::size_t n = 0; n < g.n; ++n) {
        for (std::size_t co = 0; co < g.c_out; ++co) {
            const std::size_t out_plane = (n * g.c_out + co) * g.oh * g.ow;
            for (std::size_t ci = 0; ci < g.c_in; ++ci) {
                const std::size_t in_plane = (n * g.c_in + ci) * g.h * g.w;
                for (std::size_t i = 0; i < g.kh; ++i) {
                    const std::size_t k_row = ((co * g.c_in + ci) * g.kh + i) * g.kw;
                    for (std::size_t oh = 0; oh < g.oh; ++oh) {
                        const Index ih = static_cast<Index>(oh * g.sh + i) - g.pad_h;
                        if (ih < 0 || ih >= static_cast<Index>(g.h)) continue;
                        const std::size_t out_row = out_plane + oh * g.ow;
                        const std::size_t in_row = in_plane + static_cast<std::size_t>(ih) * g.w;
                        for (std::size_t j = 0; j < g.kw; ++j) {
                            auto [lo, hi] = column_range(g, j);
                            if (lo < hi) body(out_row, in_row, k_row + j, j, lo, hi);
                        }
                    }
                }
            }
        }
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape != b.shape)
        throw Error(std::string(what) + ": shape mismatch " + to_string(a.shape) + " vs " +
                    to_string(b.shape));
}

}  // namespace

PadSplit same_padding(std::size_t kernel_extent) {
    const std::size_t p = kernel_extent ? kernel_extent - 1 : 0;
    return PadSplit{p / 2, p - p / 2};
}

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, Padding padding) {
    if (stride == 0) throw Error("stride must be positive");
    if (kernel == 0) throw Error("kernel extent must be positive");
    std::size_t padded = in;
    if (padding == Padding::same) {
        const std::size_t p = kernel - 1;
        if (p > 0 && stride != 1) throw Error("same padding requires stride 1 on the padded axis");
        padded += p;
    }
    if (kernel > padded || in == 0) throw Error("kernel exceeds input");
    return (padded - kernel) / stride + 1;
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const ConvOptions& opts) {
    const ConvGeometry g = conv_geometry(input.shape, kernel.shape, opts);
    Tensor out(Shape{g.n, g.c_out, g.oh, g.ow});
    const double* in = input.data.data();
    const double* k = kernel.data.data();
    double* o = out.data.data();
    for_each_tap(g, [&](std::size_t out_row, std::size_t in_row, std::size_t k_idx, std::size_t j,
                        std::size_t lo, std::size_t hi) {
        const double kv = k[k_idx];
        const double* src = in + tap_start(g, in_row, j, lo);
        double* dst = o + out_row + lo;
        for (std::size_t t = 0; t < hi - lo; ++t) dst[t] += kv * src[t * g.sw];
    });
    return out;
}

Var conv2d(Var input, Var kernel, const ConvOptions& opts) {
    Tape& tape = *input.tape;
    Tensor out = conv2d(input.value(), kernel.value(), opts);
    return tape.record(std::move(out), {input.id, kernel.id}, [opts](const BackwardArgs& a) {
        const ConvGeometry g = conv_geometry(a.in[0]->shape, a.in[1]->shape, opts);
        const double* go = a.out_grad.data();
        const double* in = a.in[0]->data.data();
        const double* k = a.in[1]->data.data();
        if (auto* gin = a.in_grad[0]) {
            double* gi = gin->data();
            for_each_tap(g, [&](std::size_t out_row, std::size_t in_row, std::size_t k_idx,
                                std::size_t j, std::size_t lo, std::size_t hi) {
                const double kv = k[k_idx];
                double* dst = gi + tap_start(g, in_row, j, lo);
                const double* src = go + out_row + lo;
                for (std::size_t t = 0; t < hi - lo; ++t) dst[t * g.sw] += kv * src[t];
            });
        }
        if (auto* gk = a.in_grad[1]) {
            double* gkd = gk->data();
            for_each_tap(g, [&](std::size_t out_row, std::size_t in_row, std::size_t k_idx,
                                std::size_t j, std::size_t lo, std::size_t hi) {
                const double* x = in + tap_start(g, in_row, j, lo);
                const double* src = go + out_row + lo;
                double acc = 0.0;
                for (std::size_t t = 0; t < hi - lo; ++t) acc += src[t] * x[t * g.sw];
                gkd[k_idx] += acc;
            });
        }
    });
}

namespace {
thread_local ReluPatternProbe* active_probe = nullptr;
}

ReluPatternProbe::ReluPatternProbe() : outer_(active_probe) { active_probe = this; }

ReluPatternProbe::~ReluPatternProbe() { active_probe = outer_; }

void ReluPatternProbe::observe(std::span<const double> pre_activation) {
    ReluPatternProbe* p = active_probe;
    if (!p) return;
    auto mix = [p](std::uint64_t word) {
        std::uint64_t z = p->signature_ ^ (word + 0x9e3779b97f4a7c15ULL + (p->signature_ << 6));
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        p->signature_ = z ^ (z >> 31);
    };
    std::uint64_t word = 0;
    for (std::size_t i = 0; i < pre_activation.size(); ++i) {
        word = (word << 1) | (pre_activation[i] > 0.0 ? 1u : 0u);
        if (i % 64 == 63) {
            mix(word);
            word = 0;
        }
    }
    mix(word ^ pre_activation.size());
}

Var relu(Var x) {
    const Tensor& v = x.value();
    ReluPatternProbe::observe(v.data);
    Tensor out(v.shape);
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] > 0.0 ? v[i] : 0.0;
    return x.tape->record(std::move(out), {x.id}, [](const BackwardArgs& a) {
        auto& g = *a.in_grad[0];
        const Tensor& v = *a.in[0];
        for (std::size_t i = 0; i < g.size(); ++i)
            if (v[i] > 0.0) g[i] += a.out_grad[i];
    });
}

Var add(Var a, Var b) {
    require_same_shape(a.value(), b.value(), "add");
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return a.tape->record(std::move(out), {a.id, b.id}, [](const BackwardArgs& args) {
        for (auto* g : args.in_grad) {
            if (!g) continue;
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += args.out_grad[i];
        }
    });
}

Var dense(Var input, Var weight, Var bias) {
    const Tensor& x = input.value();
    const Tensor& w = weight.value();
    const Tensor& b = bias.value();
    if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1) throw Error("dense: dimension mismatch");
    const std::size_t n = x.shape[0], f_in = x.shape[1], f_out = w.shape[0];
    if (w.shape[1] != f_in || b.shape[0] != f_out) throw Error("dense: dimension mismatch");

    Tensor out(Shape{n, f_out});
    for (std::size_t r = 0; r < n; ++r) {
        const double* xr = &x.data[r * f_in];
        for (std::size_t o = 0; o < f_out; ++o) {
            const double* wr = &w.data[o * f_in];
            double acc = 0.0;
            for (std::size_t i = 0; i < f_in; ++i) acc += xr[i] * wr[i];
            out.data[r * f_out + o] = acc + b.data[o];
        }
    }
    return input.tape->record(std::move(out), {input.id, weight.id, bias.id}, [](const BackwardArgs& a) {
        const Tensor& x = *a.in[0];
        const Tensor& w = *a.in[1];
        const std::size_t n = x.shape[0], f_in = x.shape[1], f_out = w.shape[0];
        const double* go = a.out_grad.data();
        if (auto* gx = a.in_grad[0]) {
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t o = 0; o < f_out; ++o) {
                    const double g = go[r * f_out + o];
                    if (g == 0.0) continue;
                    const double* wr = &w.data[o * f_in];
                    double* dst = gx->data() + r * f_in;
                    for (std::size_t i = 0; i < f_in; ++i) dst[i] += g * wr[i];
                }
        }
        if (auto* gw = a.in_grad[1]) {
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t o = 0; o < f_out; ++o) {
                    const double g = go[r * f_out + o];
                    if (g == 0.0) continue;
                    const double* xr = &x.data[r * f_in];
                    double* dst = gw->data() + o * f_in;
                    for (std::size_t i = 0; i < f_in; ++i) dst[i] += g * xr[i];
                }
        }
        if (auto* gb = a.in_grad[2]) {
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t o = 0; o < f_out; ++o) (*gb)[o] += go[r * f_out + o];
        }
    });
}

Var reshape(Var x, Shape shape) {
    Tensor out = x.value().reshaped(std::move(shape));
    return x.tape->record(std::move(out), {x.id}, [](const BackwardArgs& a) {
        auto& g = *a.in_grad[0];
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += a.out_grad[i];
    });
}

Var sum(Var x) {
    double acc = 0.0;
    for (double v : x.value().data) acc += v;
    return x.tape->record(Tensor::scalar(acc), {x.id}, [](const BackwardArgs& a) {
        for (double& g : *a.in_grad[0]) g += a.out_grad[0];
    });
}

Var weighted_sum(Var x, const Tensor& weights) {
    require_same_shape(x.value(), weights, "weighted_sum");
    double acc = 0.0;
    const Tensor& v = x.value();
    for (std::size_t i = 0; i < v.size(); ++i) acc += v[i] * weights[i];
    return x.tape->record(Tensor::scalar(acc), {x.id}, [weights](const BackwardArgs& a) {
        auto& g = *a.in_grad[0];
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += a.out_grad[0] * weights[i];
    });
}

Var batchnorm(Var input, Var gamma, Var beta, BatchNormStats& stats, Mode mode,
              const BatchNormOptions& opts) {
    const Tensor& x = input.value();
    if (x.rank() != 4) throw Error("batchnorm input must be rank 4, got " + to_string(x.shape));
    if (!(opts.eps > 0.0)) throw Error("batchnorm eps must be positive");
    const std::size_t n = x.shape[0], c = x.shape[1], plane = x.shape[2] * x.shape[3];
    const std::size_t m = n * plane;
    if (m == 0) throw Error("empty normalization axis");
    if (gamma.value().size() != c || beta.value().size() != c)
        throw Error("batchnorm: gamma/beta length must equal channel count");
    if (stats.running_mean.size() != c || stats.running_var.size() != c)
        throw Error("batchnorm: running stats length must equal channel count");

    std::vector<double> mean(c), inv_std(c);
    if (mode == Mode::train) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            // Extended accumulators keep batch statistics below finite-difference noise.
            long double s = 0.0L;
            for (std::size_t b = 0; b < n; ++b) {
                const double* p = &x.data[(b * c + ch) * plane];
                for (std::size_t k = 0; k < plane; ++k) s += p[k];
            }
            const double mu = static_cast<double>(s / static_cast<long double>(m));
            long double ss = 0.0L;
            for (std::size_t b = 0; b < n; ++b) {
                const double* p = &x.data[(b * c + ch) * plane];
                for (std::size_t k = 0; k < plane; ++k) {
                    const long double d = p[k] - static_cast<long double>(mu);
                    ss += d * d;
                }
            }
            const double var = static_cast<double>(ss / static_cast<long double>(m));
            mean[ch] = mu;
            inv_std[ch] = 1.0 / std::sqrt(var + opts.eps);
            if (opts.update_stats) {
                stats.running_mean[ch] = (1.0 - opts.momentum) * stats.running_mean[ch] + opts.momentum * mu;
                stats.running_var[ch] = (1.0 - opts.momentum) * stats.running_var[ch] + opts.momentum * var;
            }
        }
    } else {
        for (std::size_t ch = 0; ch < c; ++ch) {
            mean[ch] = stats.running_mean[ch];
            inv_std[ch] = 1.0 / std::sqrt(stats.running_var[ch] + opts.eps);
        }
    }

    const Tensor& gv = gamma.value();
    const Tensor& bv = beta.value();
    Tensor out(x.shape);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t off = (b * c + ch) * plane;
            for (std::size_t k = 0; k < plane; ++k)
                out.data[off + k] = gv[ch] * (x.data[off + k] - mean[ch]) * inv_std[ch] + bv[ch];
        }

    const bool batch_stats = mode == Mode::train;
    return input.tape->record(
        std::move(out), {input.id, gamma.id, beta.id},
        [mean, inv_std, batch_stats, n, c, plane, m](const BackwardArgs& a) {
            const Tensor& x = *a.in[0];
            const Tensor& gv = *a.in[1];
            const double* go = a.out_grad.data();
            for (std::size_t ch = 0; ch < c; ++ch) {
                double sum_g = 0.0, sum_gx = 0.0;
                for (std::size_t b = 0; b < n; ++b) {
                    const std::size_t off = (b * c + ch) * plane;
                    for (std::size_t k = 0; k < plane; ++k) {
                        const double xhat = (x.data[off + k] - mean[ch]) * inv_std[ch];
                        sum_g += go[off + k];
                        sum_gx += go[off + k] * xhat;
                    }
                }
                if (auto* gg = a.in_grad[1]) (*gg)[ch] += sum_gx;
                if (auto* gb = a.in_grad[2]) (*gb)[ch] += sum_g;
                if (auto* gx = a.in_grad[0]) {
                    const double scale = gv[ch] * inv_std[ch];
                    const double md = static_cast<double>(m);
                    for (std::size_t b = 0; b < n; ++b) {
                        const std::size_t off = (b * c + ch) * plane;
                        for (std::size_t k = 0; k < plane; ++k) {
                            if (batch_stats) {
                                const double xhat = (x.data[off + k] - mean[ch]) * inv_std[ch];
                                (*gx)[off + k] += scale * (go[off + k] - sum_g / md - xhat * sum_gx / md);
                            } else {
                                (*gx)[off + k] += scale * go[off + k];
                            }
                        }
                    }
                }
            }
        });
}

Var dropout(Var x, double rate, Mode mode, std::uint64_t seed) {
    if (!(rate >= 0.0) || rate >= 1.0) throw Error("dropout rate must be in [0, 1)");
    const Tensor& v = x.value();
    if (mode == Mode::eval || rate == 0.0) {
        return x.tape->record(v, {x.id}, [](const BackwardArgs& a) {
            auto& g = *a.in_grad[0];
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += a.out_grad[i];
        });
    }
    // splitmix64 stream; a survivor is scaled by 1/(1-rate).
    std::vector<double> mask(v.size());
    std::uint64_t state = seed;
    const double keep_scale = 1.0 / (1.0 - rate);
    for (double& mk : mask) {
        std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        z ^= z >> 31;
        const double u = static_cast<double>(z >> 11) * 0x1.0p-53;
        mk = u < rate ? 0.0 : keep_scale;
    }
    Tensor out(v.shape);
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] * mask[i];
    return x.tape->record(std::move(out), {x.id}, [mask = std::move(mask)](const BackwardArgs& a) {
        auto& g = *a.in_grad[0];
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += a.out_grad[i] * mask[i];
    });
}

Tensor softmax(const Tensor& logits) {
    if (logits.rank() != 2) throw Error("softmax expects [N,K] logits");
    const std::size_t n = logits.shape[0], k = logits.shape[1];
    Tensor probs(logits.shape);
    for (std::size_t r = 0; r < n; ++r) {
        const double* z = &logits.data[r * k];
        double* p = &probs.data[r * k];
        const double mx = *std::max_element(z, z + k);
        double denom = 0.0;
        for (std::size_t j = 0; j < k; ++j) denom += (p[j] = std::exp(z[j] - mx));
        for (std::size_t j = 0; j < k; ++j) p[j] /= denom;
    }
    return probs;
}

SoftmaxXent softmax_xent(Var logits, std::span<const int> labels) {
    const Tensor& z = logits.value();
    if (z.rank() != 2) throw Error("softmax_xent expects [N,K] logits");
    const std::size_t n = z.shape[0], k = z.shape[1];
    if (labels.size() != n) throw Error("softmax_xent: label count does not match batch");
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= k) throw Error("label out of range");

    Tensor probs = softmax(z);
    double loss = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        const double* zr = &z.data[r * k];
        const double mx = *std::max_element(zr, zr + k);
        double denom = 0.0;
        for (std::size_t j = 0; j < k; ++j) denom += std::exp(zr[j] - mx);
        loss += -(zr[labels[r]] - mx - std::log(denom));
    }
    loss /= static_cast<double>(n);

    std::vector<int> ys(labels.begin(), labels.end());
    Var out = logits.tape->record(Tensor::scalar(loss), {logits.id},
                                  [probs, ys = std::move(ys), n, k](const BackwardArgs& a) {
                                      auto& g = *a.in_grad[0];
                                      const double scale = a.out_grad[0] / static_cast<double>(n);
                                      for (std::size_t r = 0; r < n; ++r)
                                          for (std::size_t j = 0; j < k; ++j) {
                                              const double onehot = static_cast<std::size_t>(ys[r]) == j ? 1.0 : 0.0;
                                              g[r * k + j] += scale * (probs.data[r * k + j] - onehot);
                                          }
                                  });
    return SoftmaxXent{out, std::move(probs)};
}

}  // namespace mbcr
