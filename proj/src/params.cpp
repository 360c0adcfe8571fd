#include "vtm/params.hpp"

#include <stdexcept>

#include "vtm/errors.hpp"

namespace vtm {

const char* param_tag_name(ParamTag tag) {
    return tag == ParamTag::pretrained ? "pretrained" : "new";
}

ParamTag param_tag_from_name(const std::string& name) {
    if (name == "pretrained") return ParamTag::pretrained;
    if (name == "new") return ParamTag::fresh;
    throw DataError("unknown parameter tag '" + name + "'");
}

Var ParamStore::add(const std::string& name, Tensor init) {
    if (has(name)) throw std::logic_error("duplicate parameter '" + name + "'");
    init.quantize_f32();
    Param p;
    p.name = name;
    p.var = leaf(std::move(init), true);
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return params_.back().var;
}

Param& ParamStore::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::logic_error("no parameter '" + name + "'");
    return params_[it->second];
}

const Param& ParamStore::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::logic_error("no parameter '" + name + "'");
    return params_[it->second];
}

int64_t ParamStore::total_elements() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p.var->value.numel();
    return n;
}

void ParamStore::zero_grads() {
    for (auto& p : params_) p.var->grad = Tensor();
}

void ParamStore::set_frozen(const std::string& prefix, bool frozen) {
    for (auto& p : params_)
        if (p.name.rfind(prefix, 0) == 0) {
            p.frozen = frozen;
            p.var->requires_grad = !frozen;
        }
}

}  // namespace vtm
