#include "vtm/objective.hpp"

#include <algorithm>
#include <cmath>

#include "vtm/errors.hpp"

namespace vtm {

double Temperature::tau() const { return std::exp(-log_scale->value[0]); }

double Temperature::scale() const {
    return std::min(std::exp(log_scale->value[0]), kMaxScale);
}

Temperature make_temperature(ParamStore& store, double init_log_scale) {
    Temperature t;
    t.log_scale = store.add("temp.log_scale", Tensor::full({1}, init_log_scale));
    return t;
}

Tensor cosine_similarity(const Tensor& v, const Tensor& w) {
    if (v.rank() != 2 || w.rank() != 2 || v.dim(1) != w.dim(1))
        throw ConfigError("cosine_similarity: inputs must be [N,d] and [M,d]");
    const int64_t n = v.dim(0), m = w.dim(0), d = v.dim(1);
    auto row_norm = [d](const Tensor& t, int64_t i) {
        double s = 0.0;
        for (int64_t k = 0; k < d; ++k) s += t[i * d + k] * t[i * d + k];
        return std::sqrt(s);
    };
    std::vector<double> vn(static_cast<size_t>(n)), wn(static_cast<size_t>(m));
    for (int64_t i = 0; i < n; ++i) {
        vn[static_cast<size_t>(i)] = row_norm(v, i);
        if (vn[static_cast<size_t>(i)] < 1e-12)
            throw DegenerateEmbeddingError("cosine_similarity: zero-norm row in first argument");
    }
    for (int64_t j = 0; j < m; ++j) {
        wn[static_cast<size_t>(j)] = row_norm(w, j);
        if (wn[static_cast<size_t>(j)] < 1e-12)
            throw DegenerateEmbeddingError("cosine_similarity: zero-norm row in second argument");
    }
    Tensor out({n, m});
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < m; ++j) {
            double dot = 0.0;
            for (int64_t k = 0; k < d; ++k) dot += v[i * d + k] * w[j * d + k];
            out[i * m + j] = dot / (vn[static_cast<size_t>(i)] * wn[static_cast<size_t>(j)]);
        }
    }
    return out;
}

Tensor softmax_scores(const Tensor& sim, double tau) {
    if (sim.rank() != 2) throw ConfigError("softmax_scores: similarity must be [N,M]");
    if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("softmax_scores: tau must be positive");
    const int64_t n = sim.dim(0), m = sim.dim(1);
    for (int64_t i = 0; i < sim.numel(); ++i)
        if (!std::isfinite(sim[i])) throw NumericError("softmax_scores: non-finite similarity");
    Tensor out({n, m});
    for (int64_t i = 0; i < n; ++i) {
        double hi = -1e300;
        for (int64_t j = 0; j < m; ++j) hi = std::max(hi, sim[i * m + j] / tau);
        double z = 0.0;
        for (int64_t j = 0; j < m; ++j) {
            out[i * m + j] = std::exp(sim[i * m + j] / tau - hi);
            z += out[i * m + j];
        }
        for (int64_t j = 0; j < m; ++j) out[i * m + j] /= z;
    }
    return out;
}

Tensor ground_truth(const std::vector<int64_t>& labels, Direction dir) {
    const int64_t n = static_cast<int64_t>(labels.size());
    if (n < 1) throw ConfigError("ground_truth: empty batch");
    Tensor q({n, n});
    for (int64_t i = 0; i < n; ++i) {
        int64_t k = 0;
        for (int64_t j = 0; j < n; ++j)
            if (labels[static_cast<size_t>(j)] == labels[static_cast<size_t>(i)]) ++k;
        for (int64_t j = 0; j < n; ++j)
            if (labels[static_cast<size_t>(j)] == labels[static_cast<size_t>(i)])
                q[i * n + j] = 1.0 / static_cast<double>(k);
    }
    if (dir == Direction::y2x) {
        Tensor qt({n, n});
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < n; ++j) qt[j * n + i] = q[i * n + j];
        return qt;
    }
    return q;
}

double kl_divergence_rows(const Tensor& q, const Tensor& p) {
    if (q.rank() != 2 || !q.same_shape(p)) throw ConfigError("kl_divergence_rows: shape mismatch");
    const int64_t n = q.dim(0), m = q.dim(1);
    double total = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < m; ++j) {
            const double qv = q[i * m + j];
            if (qv <= 0.0) continue;
            const double pv = p[i * m + j];
            if (pv <= 0.0) throw NumericError("kl_divergence_rows: zero score on the target support");
            total += qv * std::log(qv / pv);
        }
    }
    return total / static_cast<double>(n);
}

double kl_contrastive_loss(const Tensor& p_x2y, const Tensor& p_y2x, const Tensor& q_x2y,
                           const Tensor& q_y2x) {
    return 0.5 * (kl_divergence_rows(q_x2y, p_x2y) + kl_divergence_rows(q_y2x, p_y2x));
}

Var contrastive_loss_graph(const Var& video_emb, const Var& text_emb,
                           const std::vector<int64_t>& labels, const Temperature& temp) {
    if (!video_emb || !text_emb || video_emb->value.rank() != 2 || text_emb->value.rank() != 2)
        throw ConfigError("contrastive_loss_graph: embeddings must be [N,d]");
    const int64_t n = video_emb->value.dim(0);
    if (text_emb->value.dim(0) != n || static_cast<int64_t>(labels.size()) != n)
        throw ConfigError("contrastive_loss_graph: batch sizes disagree");
    if (video_emb->value.dim(1) != text_emb->value.dim(1))
        throw ConfigError("contrastive_loss_graph: embedding dims disagree");
    Var vn = l2_normalize_rows(video_emb);
    Var tn = l2_normalize_rows(text_emb);
    Var sim = matmul(vn, transpose2d(tn));
    Var sc = clamp_max(exp_v(temp.log_scale), kMaxScale);
    Var logits = mul_scalar(sim, sc);
    Var l_x2y = kl_loss_from_logits(logits, ground_truth(labels, Direction::x2y));
    Var l_y2x = kl_loss_from_logits(transpose2d(logits), ground_truth(labels, Direction::y2x));
    return scale(add(l_x2y, l_y2x), 0.5);
}

}  // namespace vtm
