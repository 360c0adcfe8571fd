#pragma once

#include <cassert>
#include <cstdint>
#include <string>
#include <vector>

namespace vtm {

int64_t shape_numel(const std::vector<int64_t>& shape);

// Dense row-major tensor of doubles.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int64_t> shape)
        : shape_(std::move(shape)), data_(static_cast<size_t>(shape_numel(shape_)), 0.0) {}

    static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int64_t> shape, double v);
    static Tensor from(std::vector<int64_t> shape, std::vector<double> data);
    static Tensor scalar(double v) { return from({1}, {v}); }

    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    int rank() const { return static_cast<int>(shape_.size()); }
    int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    const std::vector<int64_t>& shape() const { return shape_; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // 2-D accessors, valid when rank()==2
    double& at(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
    double at(int64_t i, int64_t j) const { return data_[static_cast<size_t>(i * shape_[1] + j)]; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    std::string shape_str() const;

    // Round every element through float32. Parameters live on the float32
    // grid so checkpoints (32-bit payload) round-trip bit-exactly.
    void quantize_f32();

private:
    std::vector<int64_t> shape_;
    std::vector<double> data_;
};

}  // namespace vtm
