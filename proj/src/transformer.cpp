#include "vtm/transformer.hpp"

#include <cmath>

namespace vtm {

Tensor normal_init(std::vector<int64_t> shape, double stddev, Rng& rng) {
    Tensor t(shape);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, stddev);
    return t;
}

BlockParams make_block(ParamStore& store, const std::string& prefix, int64_t width,
                       double resid_std, Rng& rng) {
    const double std_in = 1.0 / std::sqrt(static_cast<double>(width));
    const int64_t hidden = 4 * width;
    BlockParams b;
    b.ln1_g = store.add(prefix + ".ln1.g", Tensor::full({width}, 1.0));
    b.ln1_b = store.add(prefix + ".ln1.b", Tensor({width}));
    b.w_qkv = store.add(prefix + ".attn.w_qkv", normal_init({width, 3 * width}, std_in, rng));
    b.b_qkv = store.add(prefix + ".attn.b_qkv", Tensor({3 * width}));
    b.w_o = store.add(prefix + ".attn.w_o", normal_init({width, width}, resid_std, rng));
    b.b_o = store.add(prefix + ".attn.b_o", Tensor({width}));
    b.ln2_g = store.add(prefix + ".ln2.g", Tensor::full({width}, 1.0));
    b.ln2_b = store.add(prefix + ".ln2.b", Tensor({width}));
    b.mlp_w1 = store.add(prefix + ".mlp.w1", normal_init({width, hidden}, std_in, rng));
    b.mlp_b1 = store.add(prefix + ".mlp.b1", Tensor({hidden}));
    b.mlp_w2 = store.add(prefix + ".mlp.w2",
                         normal_init({hidden, width}, resid_std, rng));
    b.mlp_b2 = store.add(prefix + ".mlp.b2", Tensor({width}));
    return b;
}

std::vector<BlockParams> make_blocks(ParamStore& store, const std::string& prefix,
                                     int64_t layers, int64_t width, bool zero_residual,
                                     Rng& rng) {
    const double resid_std =
        zero_residual ? 0.0
                      : 1.0 / std::sqrt(static_cast<double>(width)) /
                            std::sqrt(2.0 * static_cast<double>(std::max<int64_t>(layers, 1)));
    std::vector<BlockParams> out;
    for (int64_t i = 0; i < layers; ++i)
        out.push_back(make_block(store, prefix + ".block" + std::to_string(i), width, resid_std, rng));
    return out;
}

namespace {

// x: [S, T, W] -> multi-head self-attention output [S, T, W]
Var attention(Var x, const BlockParams& p, int64_t heads, const Var& mask) {
    const int64_t S = x->value.dim(0), T = x->value.dim(1), W = x->value.dim(2);
    const int64_t hd = W / heads;
    Var flat = reshape(x, {S * T, W});
    Var qkv = add_bcast(matmul(flat, p.w_qkv), p.b_qkv);  // [S*T, 3W]

    auto split_heads = [&](Var m) {
        // [S*T, W] -> [S*heads, T, hd]
        Var r = reshape(m, {S, T, heads, hd});
        Var perm = permute(r, {0, 2, 1, 3});
        return reshape(perm, {S * heads, T, hd});
    };
    Var q = split_heads(slice_cols(qkv, 0, W));
    Var k = split_heads(slice_cols(qkv, W, W));
    Var v = split_heads(slice_cols(qkv, 2 * W, W));

    Var scores = scale(bmm(q, transpose_last2(k)), 1.0 / std::sqrt(static_cast<double>(hd)));
    if (mask) scores = add_bcast(scores, mask);
    Var attn = softmax_last(scores);
    Var ctx = bmm(attn, v);  // [S*heads, T, hd]
    Var merged = reshape(permute(reshape(ctx, {S, heads, T, hd}), {0, 2, 1, 3}), {S * T, W});
    Var out = add_bcast(matmul(merged, p.w_o), p.b_o);
    return reshape(out, {S, T, W});
}

Var mlp(Var x, const BlockParams& p) {
    const int64_t S = x->value.dim(0), T = x->value.dim(1), W = x->value.dim(2);
    Var flat = reshape(x, {S * T, W});
    Var h = gelu(add_bcast(matmul(flat, p.mlp_w1), p.mlp_b1));
    Var out = add_bcast(matmul(h, p.mlp_w2), p.mlp_b2);
    return reshape(out, {S, T, W});
}

}  // namespace

Var transformer_stack(Var x, const std::vector<BlockParams>& blocks, int64_t heads,
                      const Var& mask, const std::function<Var(Var)>& pre_block) {
    for (const auto& b : blocks) {
        if (pre_block) x = pre_block(x);
        x = add(x, attention(layer_norm(x, b.ln1_g, b.ln1_b), b, heads, mask));
        x = add(x, mlp(layer_norm(x, b.ln2_g, b.ln2_b), b));
    }
    return x;
}

Tensor causal_mask(int64_t len) {
    Tensor m({len, len});
    for (int64_t i = 0; i < len; ++i)
        for (int64_t j = i + 1; j < len; ++j) m[i * len + j] = -1e9;
    return m;
}

}  // namespace vtm
