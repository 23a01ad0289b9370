#pragma once

#include <vector>

#include "camlmlab/rng.hpp"
#include "camlmlab/tensor.hpp"

namespace camlmlab::testutil {

template <typename S>
Tensor<S> random_tensor(std::vector<int> shape, Rng& rng, bool requires_grad = true,
                        double scale = 1.0) {
    auto t = make_tensor<S>(std::move(shape), requires_grad);
    for (auto& v : t->value) v = static_cast<S>((rng.next_unit() * 2.0 - 1.0) * scale);
    return t;
}

inline BoolMatrix random_mask(int n, Rng& rng, double keep_prob = 0.7) {
    BoolMatrix m(n);
    for (int i = 0; i < n; ++i) {
        bool any = false;
        for (int j = 0; j < n; ++j) {
            if (rng.bernoulli(keep_prob)) {
                m.at(i, j) = 1;
                any = true;
            }
        }
        if (!any) m.at(i, static_cast<int>(rng.below(n))) = 1;
    }
    return m;
}

}  // namespace camlmlab::testutil
