#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "vtm/tensor.hpp"

// Reverse-mode autodiff over a dynamically built tape. Nodes hold the
// forward value; backward() walks the tape in reverse topological order and
// accumulates gradients into every node with requires_grad set.
namespace vtm {

struct TapeNode;
using Var = std::shared_ptr<TapeNode>;

struct TapeNode {
    Tensor value;
    Tensor grad;  // empty until backward touches this node
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void(TapeNode&)> backprop;  // reads own grad, accumulates into parents

    Tensor& ensure_grad();
    bool has_grad() const { return grad.numel() != 0; }
};

Var leaf(Tensor value, bool requires_grad = false);
Var make_op(Tensor value, std::vector<Var> parents, std::function<void(TapeNode&)> backprop);

// Accumulate g into node's grad (allocating zeros first if needed).
void accumulate(TapeNode& node, const Tensor& g);

// Backpropagate from a scalar root (numel()==1); seeds d(root)/d(root)=1.
void backward(const Var& root);

// ---- elementwise ----
Var add(const Var& a, const Var& b);                 // same shape
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);                 // Hadamard
Var scale(const Var& x, double c);
Var add_bcast(const Var& x, const Var& b);           // b's shape is a suffix of x's
Var mul_scalar(const Var& x, const Var& s);          // s has numel()==1
Var exp_v(const Var& x);
Var clamp_max(const Var& x, double hi);              // zero grad where clamped
Var gelu(const Var& x);
Var sigmoid_v(const Var& x);
Var tanh_v(const Var& x);

// ---- shape ----
Var reshape(const Var& x, std::vector<int64_t> shape);
Var transpose2d(const Var& x);                        // [m,n] -> [n,m]
Var transpose_last2(const Var& x);                    // swap last two axes
Var permute(const Var& x, std::vector<int> axes);     // rank <= 4
Var slice_axis1(const Var& x, int64_t start, int64_t len);   // [S,T,W] -> [S,len,W]
Var slice_cols(const Var& x, int64_t start, int64_t len);    // [N,D] -> [N,len]
Var concat_axis1(const Var& a, const Var& b);                // [S,T1,W]+[S,T2,W]
Var expand_rows(const Var& v, int64_t n);                    // [W] -> [n,W]
Var select_axis1(const Var& x, int64_t index);               // [S,T,W] -> [S,W]
Var select_per_row(const Var& x, std::vector<int64_t> pos);  // [S,T,W] -> [S,W]
Var gather_rows(const Var& table, std::vector<int64_t> ids); // [V,W] -> [n,W]

// ---- reductions / linear algebra ----
Var sum_all(const Var& x);                           // -> [1]
Var mean_axis1(const Var& x);                        // [S,T,W] -> [S,W]
Var matmul(const Var& a, const Var& b);              // [m,k]x[k,n]
Var bmm(const Var& a, const Var& b);                 // [B,m,k]x[B,k,n]
Var softmax_last(const Var& x);                      // softmax over last axis
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var l2_normalize_rows(const Var& x);                 // [N,D], rows to unit norm

// ---- domain ops ----
// x: [clips*frames, tokens, width]; channel shift along the frame axis.
Var temporal_shift_op(const Var& x, int64_t clips, int64_t frames, int64_t fold);
// u: [B,F,d], kernel: [3,d,d], bias: [d]; zero-padded same-length conv.
Var conv1d_time(const Var& u, const Var& kernel, const Var& bias);
// x: [B*F, P, W] plus per-frame embedding e: [F, W] added to every token.
Var add_frame_embedding(const Var& x, const Var& e, int64_t frames);
// KL(q || softmax(logits)) averaged over rows; q is a fixed row-stochastic target.
Var kl_loss_from_logits(const Var& logits, const Tensor& q);

}  // namespace vtm
