#pragma once

#include "pnerf/tensor.hpp"

#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace pnerf {

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

struct AdamState {
    float lr = 5e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float grad_clip = 0.0f;  // 0 = off
    int64_t t = 0;
    std::map<std::string, std::vector<float>> m, v;
};

// One bias-corrected Adam update over all params; grads are zeroed after.
inline void adam_step(NamedParams& params, AdamState& st) {
    st.t += 1;
    float bc1 = 1.0f - std::pow(st.beta1, float(st.t));
    float bc2 = 1.0f - std::pow(st.beta2, float(st.t));
    for (auto& [name, p] : params) {
        if (!p.has_grad())
            throw std::runtime_error("adam_step: missing gradient for parameter " + name);
        auto& m = st.m[name];
        auto& v = st.v[name];
        if (m.empty()) m.assign(p.numel(), 0.0f);
        if (v.empty()) v.assign(p.numel(), 0.0f);
        if (m.size() != p.value().size())
            throw std::runtime_error("adam_step: moment shape mismatch for " + name);
        auto& val = p.value();
        auto& g = p.grad();
        if (st.grad_clip > 0.0f) {
            double sq = 0.0;
            for (float gi : g) sq += double(gi) * gi;
            float norm = float(std::sqrt(sq));
            if (norm > st.grad_clip) {
                float s = st.grad_clip / norm;
                for (float& gi : g) gi *= s;
            }
        }
        for (size_t i = 0; i < val.size(); ++i) {
            m[i] = st.beta1 * m[i] + (1.0f - st.beta1) * g[i];
            v[i] = st.beta2 * v[i] + (1.0f - st.beta2) * g[i] * g[i];
            float mhat = m[i] / bc1;
            float vhat = v[i] / bc2;
            val[i] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
        }
        p.zero_grad();
    }
}

inline void zero_grads(NamedParams& params) {
    for (auto& [name, p] : params) p.zero_grad();
}

}  // namespace pnerf
