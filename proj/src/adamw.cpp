#include "promptaug/adamw.hpp"

#include <cmath>
#include <cstdio>

#include "promptaug/kernels.hpp"

namespace promptaug {

bool AdamW::step(std::span<Parameter> params) {
    // Validate every trainable gradient before touching any buffer so a
    // rejected step leaves parameters and moments exactly as they were.
    for (const Parameter& p : params) {
        if (!p.trainable || !p.tensor.has_grad()) continue;
        for (float g : std::as_const(p.tensor).grad()) {
            if (!std::isfinite(g)) {
                std::fprintf(stderr,
                             "[adamw] warning: non-finite gradient in '%s', step %lld rejected\n",
                             p.name.c_str(), static_cast<long long>(t_ + 1));
                return false;
            }
        }
    }
    ++t_;
    const float bc1 = 1.0f - std::pow(cfg_.beta1, static_cast<float>(t_));
    const float bc2 = 1.0f - std::pow(cfg_.beta2, static_cast<float>(t_));
    for (Parameter& p : params) {
        if (!p.trainable || !p.tensor.has_grad()) continue;
        Moments& mo = moments_[p.name];
        if (mo.m.empty()) {
            mo.m.assign(p.tensor.numel(), 0.0f);
            mo.v.assign(p.tensor.numel(), 0.0f);
        }
        kernels::active().adamw_update(p.tensor.data(), std::as_const(p.tensor).grad().data(),
                                       mo.m.data(), mo.v.data(), p.tensor.numel(), cfg_.lr,
                                       cfg_.beta1, cfg_.beta2, cfg_.eps, cfg_.weight_decay, bc1,
                                       bc2);
    }
    return true;
}

}  // namespace promptaug
