#pragma once

// Linear maps, layer normalization, GRU cell and the transformer encoder.
//
// Weights may carry a leading "group" axis ([G, in, out]) so that G
// independent networks run as one batched product; inputs are then
// [G, M, in]. Without the group axis any leading batch dims are allowed.

#include <cmath>
#include <string>
#include <vector>

#include "dmm/nn/ops.hpp"
#include "dmm/nn/parameters.hpp"
#include "dmm/random.hpp"

namespace dmm::nn {

template <class T>
std::vector<T> uniform_values(Rng& rng, std::size_t n, double bound)
{
    std::vector<T> v(n);
    for (auto& x : v) {
        x = static_cast<T>(rng.uniform(-bound, bound));
    }
    return v;
}

/// Weight of shape `shape` (last two dims in x out) drawn from U(-1/sqrt(in), 1/sqrt(in)).
template <class T>
Tensor<T> add_weight(ParameterStore<T>& store, const std::string& name, Shape shape, Rng& rng, double gain = 1.0)
{
    const std::size_t fan_in = shape.at(shape.size() - 2);
    const std::size_t n = numel_of(shape);
    return store.add(name, std::move(shape), uniform_values<T>(rng, n, gain / std::sqrt(static_cast<double>(fan_in))));
}

template <class T>
Tensor<T> add_constant(ParameterStore<T>& store, const std::string& name, Shape shape, T value)
{
    const std::size_t n = numel_of(shape);
    return store.add(name, std::move(shape), std::vector<T>(n, value));
}

/// x W + b. For grouped weights ([G, in, out]) the bias is [G, out] or
/// already expanded to [G, M, out].
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b)
{
    if (w.rank() == 2) {
        if (x.shape().back() != w.dim(0) || b.numel() != w.dim(1)) {
            throw ShapeError("linear: " + shape_str(x.shape()) + " x " + shape_str(w.shape()) + " + " +
                             shape_str(b.shape()));
        }
        return add(mm(x, w), b);
    }
    const Tensor<T> xw = bmm(x, w);
    return add(xw, b.rank() == 3 ? b : expand_axis(b, 1, x.dim(1)));
}

template <class T>
struct LinearParams {
    Tensor<T> w;
    Tensor<T> b;

    static LinearParams create(ParameterStore<T>& store, const std::string& prefix, std::size_t in, std::size_t out,
                               Rng& rng, std::size_t groups = 0, double gain = 1.0)
    {
        Shape ws = groups ? Shape{groups, in, out} : Shape{in, out};
        Shape bs = groups ? Shape{groups, out} : Shape{out};
        LinearParams p;
        p.w = add_weight(store, prefix + ".w", ws, rng, gain);
        p.b = add_constant(store, prefix + ".b", bs, T(0));
        return p;
    }

    static LinearParams bind(const ParameterStore<T>& store, const std::string& prefix)
    {
        return {store.get(prefix + ".w"), store.get(prefix + ".b")};
    }

    Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, w, b); }
};

/// Normalizes over the last axis (eps 1e-5), then applies gain and bias.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, double eps = 1e-5)
{
    const std::size_t last = x.rank() - 1;
    const std::size_t d = x.shape().back();
    const Tensor<T> mu = expand_axis(mean_axis(x, last), last, d);
    const Tensor<T> xc = sub(x, mu);
    const Tensor<T> var = mean_axis(square(xc), last);
    const Tensor<T> inv = expand_axis(reciprocal(sqrt(add_scalar(var, eps))), last, d);
    return add(mul(mul(xc, inv), gain), bias);
}

template <class T>
struct NormParams {
    Tensor<T> gain;
    Tensor<T> bias;

    static NormParams create(ParameterStore<T>& store, const std::string& prefix, std::size_t d)
    {
        return {add_constant(store, prefix + ".gain", {d}, T(1)), add_constant(store, prefix + ".bias", {d}, T(0))};
    }
    static NormParams bind(const ParameterStore<T>& store, const std::string& prefix)
    {
        return {store.get(prefix + ".gain"), store.get(prefix + ".bias")};
    }
    Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gain, bias); }
};

// ---------------------------------------------------------------------------
// GRU

/// Gate blocks are ordered reset, update, candidate along the last axis.
template <class T>
struct GruParams {
    Tensor<T> wx;  // [in, 3H] or [G, in, 3H]
    Tensor<T> wh;  // [H, 3H] or [G, H, 3H]
    Tensor<T> bx;  // [3H], [G, 3H] or [G, M, 3H]
    Tensor<T> bh;

    std::size_t hidden() const { return wh.shape().back() / 3; }
    bool grouped() const { return wx.rank() == 3; }

    static GruParams create(ParameterStore<T>& store, const std::string& prefix, std::size_t in, std::size_t hidden,
                            Rng& rng, std::size_t groups = 0)
    {
        const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
        auto shape = [&](std::size_t rows) { return groups ? Shape{groups, rows, 3 * hidden} : Shape{rows, 3 * hidden}; };
        const Shape bs = groups ? Shape{groups, 3 * hidden} : Shape{3 * hidden};
        GruParams p;
        p.wx = store.add(prefix + ".wx", shape(in), uniform_values<T>(rng, numel_of(shape(in)), bound));
        p.wh = store.add(prefix + ".wh", shape(hidden), uniform_values<T>(rng, numel_of(shape(hidden)), bound));
        p.bx = add_constant(store, prefix + ".bx", bs, T(0));
        p.bh = add_constant(store, prefix + ".bh", bs, T(0));
        return p;
    }

    static GruParams bind(const ParameterStore<T>& store, const std::string& prefix)
    {
        return {store.get(prefix + ".wx"), store.get(prefix + ".wh"), store.get(prefix + ".bx"),
                store.get(prefix + ".bh")};
    }

    /// Grouped weights with biases pre-expanded to M rows per group, so a
    /// rollout does not re-expand them every step.
    GruParams expanded(std::size_t m) const
    {
        if (!grouped() || bx.rank() == 3) {
            return *this;
        }
        return {wx, wh, expand_axis(bx, 1, m), expand_axis(bh, 1, m)};
    }

    /// Group rows picked by `idx` (one group per batch element).
    GruParams select(const std::vector<std::size_t>& idx) const
    {
        return {index_select0(wx, idx), index_select0(wh, idx), index_select0(bx, idx), index_select0(bh, idx)};
    }
};

/// h' = n + z * (h - n) = (1 - z) * n + z * h, with
/// r = sig(x Wr + h Ur), z = sig(x Wz + h Uz), n = tanh(x Wn + r * (h Un)).
template <class T>
Tensor<T> gru_step(const Tensor<T>& h, const Tensor<T>& x, const GruParams<T>& p)
{
    const std::size_t H = p.hidden();
    if (h.shape().back() != H) {
        throw ShapeError("gru_step: hidden " + shape_str(h.shape()) + " vs " + std::to_string(H));
    }
    const std::size_t last = h.rank() - 1;
    const Tensor<T> gx = linear(x, p.wx, p.bx);
    const Tensor<T> gh = linear(h, p.wh, p.bh);
    const Tensor<T> r = sigmoid(add(slice_axis(gx, last, 0, H), slice_axis(gh, last, 0, H)));
    const Tensor<T> z = sigmoid(add(slice_axis(gx, last, H, H), slice_axis(gh, last, H, H)));
    const Tensor<T> n = tanh(add(slice_axis(gx, last, 2 * H, H), mul(r, slice_axis(gh, last, 2 * H, H))));
    return add(n, mul(z, sub(h, n)));
}

// ---------------------------------------------------------------------------
// Transformer encoder

struct EncoderConfig {
    std::size_t input_dim = 51;
    std::size_t embed_dim = 64;
    std::size_t num_heads = 4;
    std::size_t num_layers = 2;
    std::size_t ffn_dim = 128;
    std::size_t max_sequence_len = 64;
    bool positional_encoding = true;

    void validate() const
    {
        if (!input_dim || !embed_dim || !num_heads || !num_layers || !ffn_dim || !max_sequence_len) {
            throw ConfigError("encoder dimensions must be positive");
        }
        if (embed_dim % num_heads != 0) {
            throw ConfigError("embed_dim " + std::to_string(embed_dim) + " is not divisible by num_heads " +
                              std::to_string(num_heads));
        }
    }

    friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

/// Additive sinusoidal table, [len, dim].
template <class T>
std::vector<T> sinusoidal_table(std::size_t len, std::size_t dim)
{
    std::vector<T> v(len * dim);
    for (std::size_t pos = 0; pos < len; ++pos) {
        for (std::size_t i = 0; i < dim; ++i) {
            const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
            const double a = static_cast<double>(pos) * rate;
            v[pos * dim + i] = static_cast<T>(i % 2 == 0 ? std::sin(a) : std::cos(a));
        }
    }
    return v;
}

/// Intermediate values recorded by one encoder call.
template <class T>
struct EncoderTrace {
    std::vector<Tensor<T>> attention;  // per layer, [B, heads, T, T]
    std::vector<Tensor<T>> ffn_input;  // per layer, pre-activation of the first FFN map
};

template <class T>
class Encoder {
public:
    struct Layer {
        LinearParams<T> qkv;
        LinearParams<T> proj;
        NormParams<T> norm1;
        LinearParams<T> ff1;
        LinearParams<T> ff2;
        NormParams<T> norm2;
    };

    Encoder() = default;

    /// Registers fresh parameters under `prefix`.
    Encoder(ParameterStore<T>& store, const std::string& prefix, const EncoderConfig& config, Rng& rng)
        : config_(config)
    {
        config.validate();
        const std::size_t d = config.embed_dim;
        embed_ = LinearParams<T>::create(store, prefix + ".embed", config.input_dim, d, rng);
        for (std::size_t l = 0; l < config.num_layers; ++l) {
            const std::string p = prefix + ".layer" + std::to_string(l);
            Layer layer;
            layer.qkv = LinearParams<T>::create(store, p + ".qkv", d, 3 * d, rng);
            layer.proj = LinearParams<T>::create(store, p + ".proj", d, d, rng);
            layer.norm1 = NormParams<T>::create(store, p + ".norm1", d);
            layer.ff1 = LinearParams<T>::create(store, p + ".ff1", d, config.ffn_dim, rng);
            layer.ff2 = LinearParams<T>::create(store, p + ".ff2", config.ffn_dim, d, rng);
            layer.norm2 = NormParams<T>::create(store, p + ".norm2", d);
            layers_.push_back(layer);
        }
        table_ = sinusoidal_table<T>(config.max_sequence_len, d);
    }

    const EncoderConfig& config() const noexcept { return config_; }

    /// [B, T, input_dim] -> [B, T, embed_dim]; [T, input_dim] -> [T, embed_dim].
    Tensor<T> operator()(const Tensor<T>& input, EncoderTrace<T>* trace = nullptr) const
    {
        if (input.rank() == 2) {
            const Tensor<T> out = (*this)(reshape(input, {1, input.dim(0), input.dim(1)}), trace);
            return reshape(out, {input.dim(0), config_.embed_dim});
        }
        if (input.rank() != 3 || input.dim(2) != config_.input_dim) {
            throw ShapeError("encoder input " + shape_str(input.shape()) + ", expected [B, T, " +
                             std::to_string(config_.input_dim) + "]");
        }
        const std::size_t B = input.dim(0);
        const std::size_t len = input.dim(1);
        if (len > config_.max_sequence_len) {
            throw ShapeError("sequence of " + std::to_string(len) + " frames exceeds max_sequence_len " +
                             std::to_string(config_.max_sequence_len));
        }
        const std::size_t d = config_.embed_dim;
        const std::size_t heads = config_.num_heads;
        const std::size_t dh = d / heads;
        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

        Tensor<T> x = embed_(input);
        if (config_.positional_encoding) {
            x = add(x, Tensor<T>::constant({len, d}, std::vector<T>(table_.begin(),
                                                                    table_.begin() + static_cast<std::ptrdiff_t>(len * d))));
        }
        auto split_heads = [&](const Tensor<T>& t) { return transpose12(reshape(t, {B, len, heads, dh})); };
        for (const auto& layer : layers_) {
            const Tensor<T> qkv = layer.qkv(x);
            const Tensor<T> q = split_heads(slice_axis(qkv, 2, 0, d));
            const Tensor<T> k = split_heads(slice_axis(qkv, 2, d, d));
            const Tensor<T> v = split_heads(slice_axis(qkv, 2, 2 * d, d));
            const Tensor<T> weights = softmax_last(scale(bmm(q, k, false, true), inv_sqrt));
            const Tensor<T> ctx = reshape(transpose12(bmm(weights, v)), {B, len, d});
            x = layer.norm1(add(x, layer.proj(ctx)));
            const Tensor<T> pre = layer.ff1(x);
            if (trace) {
                trace->attention.push_back(weights);
                trace->ffn_input.push_back(pre);
            }
            x = layer.norm2(add(x, layer.ff2(relu(pre))));
        }
        return x;
    }

    /// Mean over frames: [B, T, d] -> [B, d].
    Tensor<T> pooled(const Tensor<T>& input) const { return mean_axis((*this)(input), 1); }

private:
    EncoderConfig config_;
    LinearParams<T> embed_;
    std::vector<Layer> layers_;
    std::vector<T> table_;
};

/// Functional form over a [T, input_dim] sequence.
template <class T>
Tensor<T> transformer_encode(const Tensor<T>& seq, const Encoder<T>& encoder, EncoderTrace<T>* trace = nullptr)
{
    return encoder(seq, trace);
}

} // namespace dmm::nn
