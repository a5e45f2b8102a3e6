#include "mbcr/gradcheck.hpp"

#include "mbcr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mbcr {
namespace {

void require_scalar(Var v) {
    if (v.value().size() != 1) throw Error("gradcheck function must return a scalar");
}

void track(GradcheckResult& r, std::size_t index, double analytic, double numeric) {
    const double e = relative_error(analytic, numeric);
    if (e > r.max_rel_error || std::isnan(e)) {
        r.max_rel_error = e;
        r.worst_index = index;
    }
    ++r.checked;
}

struct Probe {
    double value;
    std::uint64_t pattern;
};

template <class Eval>
Probe probe_at(const Eval& eval) {
    ReluPatternProbe watch;
    const double v = eval();
    return {v, watch.signature()};
}

// `shift(d)` moves the probed element to base + d; `eval()` returns f there.
template <class Shift, class Eval>
double central_difference(const Shift& shift, const Eval& eval, std::uint64_t base_pattern, double h,
                          GradcheckResult& r) {
    double step = h;
    for (;;) {
        shift(step);
        const Probe up = probe_at(eval);
        shift(-step);
        const Probe down = probe_at(eval);
        shift(0.0);
        const bool crossed = up.pattern != base_pattern || down.pattern != base_pattern;
        if (!crossed || step <= h / 1024.0) {
            if (step != h) ++r.reduced_step;
            return (up.value - down.value) / (2.0 * step);
        }
        step /= 2.0;
    }
}

}  // namespace

double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

GradcheckResult gradcheck(const ScalarFn& f, const Tensor& point, double h) {
    std::vector<double> analytic;
    {
        Tape tape;
        Var x = tape.leaf(point, true);
        Var y = f(tape, x);
        require_scalar(y);
        tape.backward(y);
        analytic = tape.grad(x);
    }
    Tensor probe = point;
    auto eval = [&] {
        Tape tape;
        Var y = f(tape, tape.constant(probe));
        require_scalar(y);
        return y.value()[0];
    };
    const std::uint64_t base = probe_at(eval).pattern;
    GradcheckResult result;
    for (std::size_t i = 0; i < point.size(); ++i) {
        auto shift = [&](double d) { probe[i] = point[i] + d; };
        track(result, i, analytic[i], central_difference(shift, eval, base, h, result));
    }
    return result;
}

GradcheckResult gradcheck_parameter(const ParamScalarFn& f, Parameter& param, double h,
                                    const std::vector<std::size_t>& indices) {
    param.zero_grad();
    {
        Tape tape;
        Var y = f(tape);
        require_scalar(y);
        tape.backward(y);
    }
    const std::vector<double> analytic = param.grad;
    param.zero_grad();

    std::vector<std::size_t> probe = indices;
    if (probe.empty()) {
        probe.resize(param.value.size());
        std::iota(probe.begin(), probe.end(), std::size_t{0});
    }
    auto eval = [&] {
        Tape tape;
        Var y = f(tape);
        return y.value()[0];
    };
    const std::uint64_t base = probe_at(eval).pattern;
    GradcheckResult result;
    for (std::size_t i : probe) {
        if (i >= param.value.size()) throw Error("gradcheck index out of range");
        const double orig = param.value[i];
        auto shift = [&](double d) { param.value[i] = orig + d; };
        track(result, i, analytic[i], central_difference(shift, eval, base, h, result));
    }
    return result;
}

}  // namespace mbcr
