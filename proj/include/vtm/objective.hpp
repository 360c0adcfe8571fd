#pragma once

#include <cstdint>
#include <vector>

#include "vtm/autodiff.hpp"
#include "vtm/params.hpp"
#include "vtm/tensor.hpp"

namespace vtm {

// softmax sharpening starts at 1/0.07
constexpr double kInitLogScale = 2.6592600369327783;
constexpr double kMaxScale = 100.0;

struct Temperature {
    Var log_scale;  // learnable scalar

    double tau() const;    // exp(-log_scale)
    double scale() const;  // exp(log_scale) clamped to (0, kMaxScale]
};

Temperature make_temperature(ParamStore& store, double init_log_scale = kInitLogScale);

enum class Direction { x2y, y2x };

// plain-tensor path, used by inference and as the training graph's cross-check
Tensor cosine_similarity(const Tensor& v, const Tensor& w);  // [N,d] x [M,d] -> [N,M]
Tensor softmax_scores(const Tensor& sim, double tau);        // row softmax of sim/tau
// square multi-positive target: entry (i,j) = 1/k_i when labels match
Tensor ground_truth(const std::vector<int64_t>& labels, Direction dir = Direction::x2y);
// mean over rows of sum_j q_ij * log(q_ij / p_ij), with 0*log0 := 0
double kl_divergence_rows(const Tensor& q, const Tensor& p);
double kl_contrastive_loss(const Tensor& p_x2y, const Tensor& p_y2x, const Tensor& q_x2y,
                           const Tensor& q_y2x);

// differentiable composition: cosine -> scaled logits -> both-direction KL
Var contrastive_loss_graph(const Var& video_emb, const Var& text_emb,
                           const std::vector<int64_t>& labels, const Temperature& temp);

}  // namespace vtm
