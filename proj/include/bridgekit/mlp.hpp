#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rng.hpp"
#include "vec.hpp"

namespace bridgekit {

/**
 * Fully connected network with SiLU hidden layers and a linear output.
 * Parameters are one flat array; layer l stores W (out x in, row-major)
 * followed by its bias.
 */
class Mlp {
public:
    /// Per-call activations, reused across calls to avoid allocation.
    struct Workspace {
        std::vector<Vec> pre;  // pre-activations per layer
        std::vector<Vec> act;  // act[0] is the input, act[l + 1] the output of layer l
        std::vector<Vec> delta;
    };

    Mlp() = default;

    explicit Mlp(std::vector<std::size_t> widths) : widths_(std::move(widths)) {
        if (widths_.size() < 2) throw std::invalid_argument("mlp needs at least input and output widths");
        for (std::size_t w : widths_)
            if (w == 0) throw std::invalid_argument("mlp widths must be positive");
        std::size_t n = 0;
        offsets_.reserve(layers());
        for (std::size_t l = 0; l < layers(); ++l) {
            offsets_.push_back(n);
            n += widths_[l + 1] * (widths_[l] + 1);
        }
        params_.assign(n, 0.0);
    }

    const std::vector<std::size_t>& widths() const { return widths_; }
    std::size_t layers() const { return widths_.size() - 1; }
    std::size_t input_dim() const { return widths_.front(); }
    std::size_t output_dim() const { return widths_.back(); }
    std::size_t n_params() const { return params_.size(); }
    Vec& params() { return params_; }
    const Vec& params() const { return params_; }

    /// LeCun-normal weights, zero biases.
    void init(Stream& rng) {
        for (std::size_t l = 0; l < layers(); ++l) {
            const std::size_t in = widths_[l], out = widths_[l + 1];
            const double scale = 1.0 / std::sqrt(static_cast<double>(in));
            double* w = params_.data() + offsets_[l];
            for (std::size_t i = 0; i < out * in; ++i) w[i] = scale * rng.normal();
            for (std::size_t i = 0; i < out; ++i) w[out * in + i] = 0.0;
        }
    }

    void forward(std::span<const double> input, std::span<double> output, Workspace& ws) const {
        if (input.size() != input_dim() || output.size() != output_dim()) {
            throw std::invalid_argument("mlp forward: expected " + std::to_string(input_dim()) + " -> " +
                                        std::to_string(output_dim()) + ", got " + std::to_string(input.size()) +
                                        " -> " + std::to_string(output.size()));
        }
        ws.pre.resize(layers());
        ws.act.resize(layers() + 1);
        ws.act[0].assign(input.begin(), input.end());
        for (std::size_t l = 0; l < layers(); ++l) {
            const std::size_t in = widths_[l], out = widths_[l + 1];
            const double* w = params_.data() + offsets_[l];
            const double* b = w + out * in;
            const Vec& x = ws.act[l];
            Vec& z = ws.pre[l];
            z.resize(out);
            for (std::size_t o = 0; o < out; ++o) {
                double s = b[o];
                const double* row = w + o * in;
                for (std::size_t i = 0; i < in; ++i) s += row[i] * x[i];
                z[o] = s;
            }
            Vec& a = ws.act[l + 1];
            a.resize(out);
            if (l + 1 == layers()) {
                a = z;
            } else {
                for (std::size_t o = 0; o < out; ++o) a[o] = silu(z[o]);
            }
        }
        std::copy(ws.act.back().begin(), ws.act.back().end(), output.begin());
    }

    /// Adds d(grad_out . F)/d(params) to grad_params; `ws` must hold the matching forward pass.
    void backward(Workspace& ws, std::span<const double> grad_out, std::span<double> grad_params) const {
        if (grad_out.size() != output_dim() || grad_params.size() != n_params())
            throw std::invalid_argument("mlp backward: size mismatch");
        ws.delta.resize(layers());
        ws.delta.back().assign(grad_out.begin(), grad_out.end());
        for (std::size_t l = layers(); l-- > 0;) {
            const std::size_t in = widths_[l], out = widths_[l + 1];
            const double* w = params_.data() + offsets_[l];
            double* gw = grad_params.data() + offsets_[l];
            double* gb = gw + out * in;
            const Vec& x = ws.act[l];
            const Vec& d = ws.delta[l];
            for (std::size_t o = 0; o < out; ++o) {
                double* grow = gw + o * in;
                for (std::size_t i = 0; i < in; ++i) grow[i] += d[o] * x[i];
                gb[o] += d[o];
            }
            if (l == 0) break;
            Vec& prev = ws.delta[l - 1];
            prev.assign(in, 0.0);
            for (std::size_t o = 0; o < out; ++o) {
                const double* row = w + o * in;
                for (std::size_t i = 0; i < in; ++i) prev[i] += row[i] * d[o];
            }
            const Vec& z = ws.pre[l - 1];
            for (std::size_t i = 0; i < in; ++i) prev[i] *= silu_grad(z[i]);
        }
    }

private:
    static double silu(double z) { return z / (1.0 + std::exp(-z)); }
    static double silu_grad(double z) {
        const double s = 1.0 / (1.0 + std::exp(-z));
        return s * (1.0 + z * (1.0 - s));
    }

    std::vector<std::size_t> widths_;
    std::vector<std::size_t> offsets_;
    Vec params_;
};

}  // namespace bridgekit
