#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "vtm/autodiff.hpp"
#include "vtm/params.hpp"
#include "vtm/rng.hpp"

namespace vtm {

struct BlockParams {
    Var ln1_g, ln1_b;
    Var w_qkv, b_qkv, w_o, b_o;
    Var ln2_g, ln2_b;
    Var mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

Tensor normal_init(std::vector<int64_t> shape, double stddev, Rng& rng);

// Registers one pre-norm block's parameters under `prefix.`. Residual output
// projections (w_o, mlp_w2) use `resid_std`; zero makes the block start as an
// identity map.
BlockParams make_block(ParamStore& store, const std::string& prefix, int64_t width,
                       double resid_std, Rng& rng);

std::vector<BlockParams> make_blocks(ParamStore& store, const std::string& prefix,
                                     int64_t layers, int64_t width, bool zero_residual,
                                     Rng& rng);

// x: [S, T, W]; mask: empty Var for none, else additive [T, T].
// pre_block: optional hook applied to x before every block (temporal shift).
Var transformer_stack(Var x, const std::vector<BlockParams>& blocks, int64_t heads,
                      const Var& mask, const std::function<Var(Var)>& pre_block = {});

// additive causal mask: 0 on/below the diagonal, -1e9 above
Tensor causal_mask(int64_t len);

}  // namespace vtm
