// SPDX-License-Identifier: Apache-2.0

#include "collagan/optimizer.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

namespace collagan {

void AdamConfig::validate() const {
    if (!(lr > 0.0)) throw std::invalid_argument("adam: lr must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw std::invalid_argument("adam: beta1 must be in [0,1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw std::invalid_argument("adam: beta2 must be in [0,1)");
    if (!(eps > 0.0)) throw std::invalid_argument("adam: eps must be > 0");
}

Adam::Adam(std::vector<NamedTensor> params, const AdamConfig& config) : params_(std::move(params)), config_(config) {
    config_.validate();
    for (const auto& p : params_) {
        m_.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0);
        v_.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0);
    }
}

void Adam::step() {
    ++step_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& t = params_[i].tensor;
        if (!t.has_grad()) continue;
        auto g = t.grad();
        auto w = t.mutable_data();
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            w[j] -= config_.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + config_.eps);
        }
    }
    zero_grad();
}

void Adam::zero_grad() {
    for (auto& p : params_) p.tensor.clear_grad();
}

std::vector<NamedTensor> Adam::state() const {
    std::vector<NamedTensor> out;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const Shape& shape = params_[i].tensor.shape();
        out.push_back({params_[i].name + ".m", Tensor::from_data(shape, m_[i])});
        out.push_back({params_[i].name + ".v", Tensor::from_data(shape, v_[i])});
    }
    out.push_back({"adam.step", Tensor::scalar(static_cast<double>(step_))});
    return out;
}

void Adam::load_state(std::span<const NamedTensor> state) {
    std::map<std::string, const Tensor*> by_name;
    for (const auto& s : state) by_name[s.name] = &s.tensor;
    auto fetch = [&](const std::string& name, const Shape& shape) -> const Tensor& {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw FormatError("optimizer state: missing " + name);
        if (it->second->shape() != shape) throw FormatError("optimizer state: shape mismatch for " + name);
        return *it->second;
    };
    std::vector<std::vector<double>> m, v;
    for (const auto& p : params_) {
        auto md = fetch(p.name + ".m", p.tensor.shape()).data();
        auto vd = fetch(p.name + ".v", p.tensor.shape()).data();
        m.emplace_back(md.begin(), md.end());
        v.emplace_back(vd.begin(), vd.end());
    }
    const double step = fetch("adam.step", {}).item();
    m_ = std::move(m);
    v_ = std::move(v);
    step_ = static_cast<std::int64_t>(step);
}

}  // namespace collagan
