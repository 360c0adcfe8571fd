#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "vtm/autodiff.hpp"
#include "vtm/tensor.hpp"

namespace vtm {

// Optimizer group. `fresh` serializes as "new" (reserved word in C++): modules
// initialized from scratch get the higher learning rate, parameters loaded
// from a checkpoint count as pre-trained.
enum class ParamTag { pretrained, fresh };

const char* param_tag_name(ParamTag tag);
ParamTag param_tag_from_name(const std::string& name);

struct Param {
    std::string name;
    Var var;
    ParamTag tag = ParamTag::fresh;
    bool frozen = false;
};

// Ordered parameter registry; registration order defines the checkpoint
// payload order. Values are kept on the float32 grid (see Tensor::quantize_f32)
// so 32-bit checkpoints round-trip bit-exactly.
class ParamStore {
public:
    Var add(const std::string& name, Tensor init);
    bool has(const std::string& name) const { return index_.count(name) > 0; }
    Param& at(const std::string& name);
    const Param& at(const std::string& name) const;
    std::vector<Param>& all() { return params_; }
    const std::vector<Param>& all() const { return params_; }
    int64_t count() const { return static_cast<int64_t>(params_.size()); }
    int64_t total_elements() const;
    void zero_grads();
    // marks every parameter whose name starts with `prefix`
    void set_frozen(const std::string& prefix, bool frozen);

private:
    std::vector<Param> params_;
    std::unordered_map<std::string, size_t> index_;
};

}  // namespace vtm
