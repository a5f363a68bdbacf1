#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ops.hpp"

namespace pedformer {

/// Sinusoidal encoding: PE(p, 2i) = sin(p / 10000^(2i/dim)), PE(p, 2i+1) = cos(same).
inline Tensor positional_encoding(std::size_t length, std::size_t dim) {
    if (length == 0 || dim == 0) throw ContractError("positional_encoding: length and dim must be positive");
    Tensor pe({length, dim});
    for (std::size_t p = 0; p < length; ++p)
        for (std::size_t i = 0; i < dim; i += 2) {
            const double angle = static_cast<double>(p) / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(dim));
            pe.at(p, i) = std::sin(angle);
            if (i + 1 < dim) pe.at(p, i + 1) = std::cos(angle);
        }
    return pe;
}

struct Linear {
    Parameter* weight = nullptr;  // in x out
    Parameter* bias = nullptr;    // out, optional

    static Linear create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                         bool with_bias = true) {
        Linear l;
        l.weight = &store.add(name + ".w", glorot_uniform({in, out}, in, out, rng));
        if (with_bias) l.bias = &store.add(name + ".b", Tensor({out}));
        return l;
    }

    std::size_t in_features() const { return weight->value.dim(0); }
    std::size_t out_features() const { return weight->value.dim(1); }

    Var operator()(Var x) const {
        Tape& t = x.tape();
        Var y = matmul(x, t.param(*weight));
        return bias ? add_row(y, t.param(*bias)) : y;
    }
};

struct Embedding {
    Parameter* table = nullptr;  // rows x dim

    static Embedding create(ParameterStore& store, const std::string& name, std::size_t rows, std::size_t dim, Rng& rng) {
        return Embedding{&store.add(name + ".table", glorot_uniform({rows, dim}, rows, dim, rng))};
    }

    Var operator()(Tape& t, std::span<const std::size_t> indices) const { return embedding(t.param(*table), indices); }
};

struct LayerNorm {
    Parameter* gain = nullptr;
    Parameter* bias = nullptr;

    static LayerNorm create(ParameterStore& store, const std::string& name, std::size_t dim) {
        return LayerNorm{&store.add(name + ".gain", Tensor({dim}, 1.0)), &store.add(name + ".bias", Tensor({dim}))};
    }

    Var operator()(Var x) const {
        Tape& t = x.tape();
        return layer_norm(x, t.param(*gain), t.param(*bias));
    }
};

enum class CellActivation { tanh, softsign };

/// Per-step values of one recurrent pass, in input order.
struct LstmTrace {
    std::vector<Var> hidden;
    std::vector<Var> cell;
    std::vector<Var> input_gate, forget_gate, output_gate;

    /// Hidden states stacked into a [T x H] matrix.
    Var hidden_sequence() const { return concat(std::span<const Var>(hidden), 0); }
};

/// Gated recurrent unit with input, forget and output gates:
///
///     c_t = f_t * c_{t-1} + i_t * tanh(x_t W_c + h_{t-1} U_c + b_c)
///     h_t = o_t * act(c_t)
///
/// Gate blocks are packed as [i | f | c | o] along the columns of W, U and b.
struct Lstm {
    Parameter* w = nullptr;  // in x 4H
    Parameter* u = nullptr;  // H x 4H
    Parameter* b = nullptr;  // 4H
    std::size_t hidden = 0;
    CellActivation activation = CellActivation::tanh;

    static Lstm create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t hidden, Rng& rng,
                       CellActivation act = CellActivation::tanh) {
        Lstm l;
        l.hidden = hidden;
        l.activation = act;
        l.w = &store.add(name + ".lstm.w", glorot_uniform({in, 4 * hidden}, in, 4 * hidden, rng));
        l.u = &store.add(name + ".lstm.u", glorot_uniform({hidden, 4 * hidden}, hidden, 4 * hidden, rng));
        Tensor bias({4 * hidden});
        for (std::size_t j = hidden; j < 2 * hidden; ++j) bias[j] = 1.0;  // forget gate
        l.b = &store.add(name + ".lstm.b", std::move(bias));
        return l;
    }

    /// Runs over the rows of `inputs` ([T x in]); `reverse` walks from the
    /// last row to the first. The trace is always in input row order.
    LstmTrace run(Var inputs, bool reverse = false) const {
        Tape& t = inputs.tape();
        const std::size_t steps = inputs.shape()[0];
        const Var projected = add_row(matmul(inputs, t.param(*w)), t.param(*b));
        const Var recur = t.param(*u);
        LstmTrace tr;
        tr.hidden.resize(steps);
        tr.cell.resize(steps);
        tr.input_gate.resize(steps);
        tr.forget_gate.resize(steps);
        tr.output_gate.resize(steps);
        Var h, c;
        for (std::size_t k = 0; k < steps; ++k) {
            const std::size_t step = reverse ? steps - 1 - k : k;
            Var z = row(projected, step);
            if (k > 0) z = add(z, matmul(h, recur));
            Var i = sigmoid(slice(z, 1, 0, hidden));
            Var f = sigmoid(slice(z, 1, hidden, hidden));
            Var g = pedformer::tanh(slice(z, 1, 2 * hidden, hidden));
            Var o = sigmoid(slice(z, 1, 3 * hidden, hidden));
            c = k > 0 ? add(mul(f, c), mul(i, g)) : mul(i, g);
            h = mul(o, activation == CellActivation::tanh ? pedformer::tanh(c) : softsign(c));
            tr.hidden[step] = h;
            tr.cell[step] = c;
            tr.input_gate[step] = i;
            tr.forget_gate[step] = f;
            tr.output_gate[step] = o;
        }
        return tr;
    }
};

/// Multi-head attention: heads computed from column blocks of the Q/K/V
/// projections, concatenated and projected by W_o.
///
///     head_h = softmax(Q_h K_h^T [/ sqrt(d_h)]) V_h
struct MultiHeadAttention {
    Parameter* wq = nullptr;
    Parameter* wk = nullptr;
    Parameter* wv = nullptr;
    Parameter* wo = nullptr;
    Parameter* bq = nullptr;
    Parameter* bk = nullptr;
    Parameter* bv = nullptr;
    Parameter* bo = nullptr;
    std::size_t heads = 1;
    std::size_t model_dim = 0;
    bool scaled = false;

    struct Options {
        std::size_t heads = 1;
        bool scaled = false;
        bool bias = false;
    };

    static MultiHeadAttention create(ParameterStore& store, const std::string& name, std::size_t query_in,
                                     std::size_t kv_in, std::size_t model_dim, std::size_t out, Options opt, Rng& rng) {
        if (opt.heads == 0 || model_dim % opt.heads != 0)
            throw ConfigError(name + ": attention width " + std::to_string(model_dim) + " is not divisible by " +
                              std::to_string(opt.heads) + " heads");
        MultiHeadAttention a;
        a.heads = opt.heads;
        a.model_dim = model_dim;
        a.scaled = opt.scaled;
        a.wq = &store.add(name + ".wq", glorot_uniform({query_in, model_dim}, query_in, model_dim, rng));
        a.wk = &store.add(name + ".wk", glorot_uniform({kv_in, model_dim}, kv_in, model_dim, rng));
        a.wv = &store.add(name + ".wv", glorot_uniform({kv_in, model_dim}, kv_in, model_dim, rng));
        a.wo = &store.add(name + ".wo", glorot_uniform({model_dim, out}, model_dim, out, rng));
        if (opt.bias) {
            a.bq = &store.add(name + ".bq", Tensor({model_dim}));
            a.bk = &store.add(name + ".bk", Tensor({model_dim}));
            a.bv = &store.add(name + ".bv", Tensor({model_dim}));
            a.bo = &store.add(name + ".bo", Tensor({out}));
        }
        return a;
    }

    /// Per-head attention weight matrices, n_q x n_k each.
    std::vector<Var> weights(Var query, Var key) const {
        const Var q = project(query, wq, bq);
        const Var k = project(key, wk, bk);
        const std::size_t dh = model_dim / heads;
        std::vector<Var> out;
        out.reserve(heads);
        for (std::size_t h = 0; h < heads; ++h) {
            Var qh = heads == 1 ? q : slice(q, 1, h * dh, dh);
            Var kh = heads == 1 ? k : slice(k, 1, h * dh, dh);
            Var scores = matmul(qh, transpose(kh));
            if (scaled) scores = affine(scores, 1.0 / std::sqrt(static_cast<double>(dh)));
            out.push_back(softmax(scores, 1));
        }
        return out;
    }

    Var operator()(Var query, Var key, Var value) const {
        const auto attn = weights(query, key);
        const Var v = project(value, wv, bv);
        const std::size_t dh = model_dim / heads;
        std::vector<Var> outs;
        outs.reserve(heads);
        for (std::size_t h = 0; h < heads; ++h) outs.push_back(matmul(attn[h], heads == 1 ? v : slice(v, 1, h * dh, dh)));
        const Var joined = heads == 1 ? outs[0] : concat(std::span<const Var>(outs), 1);
        return project(joined, wo, bo);
    }

private:
    static Var project(Var x, Parameter* w, Parameter* b) {
        Tape& t = x.tape();
        Var y = matmul(x, t.param(*w));
        return b ? add_row(y, t.param(*b)) : y;
    }
};

/// Post-norm encoder layer: x' = Norm(x + Attn(x)); out = Norm(x' + FFN(x')).
struct TransformerLayer {
    MultiHeadAttention attention;
    LayerNorm norm1, norm2;
    Linear ff1, ff2;

    static TransformerLayer create(ParameterStore& store, const std::string& name, std::size_t width,
                                   std::size_t ffn_hidden, MultiHeadAttention::Options opt, Rng& rng) {
        TransformerLayer l;
        l.attention = MultiHeadAttention::create(store, name + ".attn", width, width, width, width, opt, rng);
        l.norm1 = LayerNorm::create(store, name + ".norm1", width);
        l.ff1 = Linear::create(store, name + ".ff1", width, ffn_hidden, rng);
        l.ff2 = Linear::create(store, name + ".ff2", ffn_hidden, width, rng);
        l.norm2 = LayerNorm::create(store, name + ".norm2", width);
        return l;
    }

    Var operator()(Var x) const {
        const Var attended = norm1(add(x, attention(x, x, x)));
        return norm2(add(attended, ff2(relu(ff1(attended)))));
    }
};

}  // namespace pedformer
