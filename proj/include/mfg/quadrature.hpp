#pragma once

#include <memory>
#include <vector>

namespace mfg {

// Gauss-Hermite rule for the standard normal: E[g(Z)] ~ sum_q w_q g(node_q), sum_q w_q = 1.
struct GaussHermite {
    std::vector<double> nodes;
    std::vector<double> weights;

    int order() const { return static_cast<int>(nodes.size()); }
};

// Rules are computed once per order and shared read-only.
std::shared_ptr<const GaussHermite> gauss_hermite(int order);

}  // namespace mfg
